#pragma once

#include <stdexcept>
#include <string>

namespace dqo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DegenerateQuadric : public Error {
 public:
  using Error::Error;
};

class DegenerateConic : public Error {
 public:
  using Error::Error;
};

class BehindCamera : public Error {
 public:
  using Error::Error;
};

class CannotInitialize : public Error {
 public:
  using Error::Error;
};

class Unoptimizable : public Error {
 public:
  using Error::Error;
};

// Raised by dataset/config readers; the message always names the offending file.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dqo
