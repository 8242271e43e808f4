#pragma once

#include <string>
#include <vector>

#include "nvist/tensor.h"

namespace nvist {

/// Optimizer parameter groups; each group gets its own learning rate.
enum class ParamGroup { Encoder = 0, DecoderRenderer = 1, Pretrain = 2 };

struct Init {
  enum class Kind { Zeros, Ones, Constant, Normal, Uniform, Values };
  Kind kind = Kind::Zeros;
  double a = 0.0;  // Constant: value; Normal: stddev; Uniform: half-width
  std::vector<double> values;

  static Init zeros() { return {}; }
  static Init ones() { return {Kind::Ones, 0.0, {}}; }
  static Init constant(double value) { return {Kind::Constant, value, {}}; }
  static Init normal(double stddev) { return {Kind::Normal, stddev, {}}; }
  static Init uniform(double half_width) { return {Kind::Uniform, half_width, {}}; }
  static Init from(std::vector<double> v) { return {Kind::Values, 0.0, std::move(v)}; }
  /// Glorot-uniform bound for a [fan_in, fan_out] weight.
  static Init xavier(std::size_t fan_in, std::size_t fan_out);
};

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group = ParamGroup::DecoderRenderer;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> value;
  ParamGroup group = ParamGroup::DecoderRenderer;
};

/// Declares the parameters of a module tree. In allocating mode every call
/// returns an initialized leaf requiring grad; in dry mode it only records
/// the declaration and returns an undefined tensor, which is how parameter
/// counts are obtained without building the model.
template <typename T>
class ParamBuilder {
 public:
  /// Dry builder.
  ParamBuilder() = default;
  explicit ParamBuilder(Rng& rng) : rng_(&rng) {}

  bool allocating() const { return rng_ != nullptr; }

  Tensor<T> make(const std::string& name, Shape shape, const Init& init);

  /// Scoped name prefix; `scope("blocks.3")` makes "blocks.3.<name>".
  class Scope {
   public:
    Scope(ParamBuilder& b, const std::string& part) : b_(b), saved_(b.prefix_) { b.prefix_ += part + "."; }
    ~Scope() { b_.prefix_ = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    ParamBuilder& b_;
    std::string saved_;
  };
  Scope scope(const std::string& part) { return Scope(*this, part); }

  class GroupScope {
   public:
    GroupScope(ParamBuilder& b, ParamGroup g) : b_(b), saved_(b.group_) { b.group_ = g; }
    ~GroupScope() { b_.group_ = saved_; }
    GroupScope(const GroupScope&) = delete;
    GroupScope& operator=(const GroupScope&) = delete;

   private:
    ParamBuilder& b_;
    ParamGroup saved_;
  };
  GroupScope group(ParamGroup g) { return GroupScope(*this, g); }

  const std::vector<ParamSpec>& specs() const { return specs_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }

 private:
  Rng* rng_ = nullptr;
  std::string prefix_;
  ParamGroup group_ = ParamGroup::DecoderRenderer;
  std::vector<ParamSpec> specs_;
  std::vector<NamedParameter<T>> params_;
};

std::size_t count_elements(const std::vector<ParamSpec>& specs);

}  // namespace nvist
