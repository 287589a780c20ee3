#pragma once

#include <stdexcept>
#include <string>

namespace attackforge {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class MalformedMarkup : public Error {
 public:
  explicit MalformedMarkup(const std::string& what) : Error(what) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line_no, const std::string& what)
      : Error("line " + std::to_string(line_no) + ": " + what), line_no(line_no) {}
  std::size_t line_no;
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate post id: " + id), id(id) {}
  std::string id;
};

class UnknownPost : public Error {
 public:
  explicit UnknownPost(const std::string& id) : Error("unknown post id: " + id), id(id) {}
  std::string id;
};

class InvalidBio : public Error {
 public:
  InvalidBio(std::size_t position, const std::string& what)
      : Error("bio position " + std::to_string(position) + ": " + what), position(position) {}
  std::size_t position;
};

class DanglingSpan : public Error {
 public:
  DanglingSpan(std::size_t dep_index, const std::string& what)
      : Error("dep " + std::to_string(dep_index) + ": " + what), dep_index(dep_index) {}
  std::size_t dep_index;
};

class DanglingRelation : public Error {
 public:
  DanglingRelation(std::size_t index, const std::string& what)
      : Error("relation " + std::to_string(index) + ": " + what), index(index) {}
  std::size_t index;
};

class EmptyScope : public Error {
 public:
  EmptyScope() : Error("empty scoped token sequence") {}
};

class EmptySelection : public Error {
 public:
  EmptySelection() : Error("no sentence lines matched in response") {}
};

class IllegalAction : public Error {
 public:
  IllegalAction(const std::string& action, const std::string& reason)
      : Error("illegal action " + action + ": " + reason) {}
};

class Underivable : public Error {
 public:
  explicit Underivable(const std::string& what) : Error("underivable gold: " + what) {}
};

class NoLegalAction : public Error {
 public:
  NoLegalAction() : Error("no legal action in current state") {}
};

class UntypedInput : public Error {
 public:
  explicit UntypedInput(const std::string& what) : Error(what) {}
};

class NoGoal : public Error {
 public:
  explicit NoGoal(const std::string& what) : Error(what) {}
};

class NoLabeledPosts : public Error {
 public:
  NoLabeledPosts() : Error("no posts with labeled events to bootstrap") {}
};

class StorageFailure : public Error {
 public:
  explicit StorageFailure(const std::string& what) : Error(what) {}
};

class NotFound : public Error {
 public:
  explicit NotFound(const std::string& id) : Error("tree not found: " + id), id(id) {}
  std::string id;
};

}  // namespace attackforge
