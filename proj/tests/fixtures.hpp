#pragma once

#include <cmath>
#include <string>

#include "hgen/prior.hpp"

namespace hgen::testing {

inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hgen_test_" + name);
  fs::remove_all(p);
  return p;
}

/// 530 frontal 32px samples: just enough for the teacher's 500-sample floor.
inline const corpus::CorpusManifest& small_corpus() {
  static const corpus::CorpusManifest m = corpus::generate_corpus(530, 5, scratch("corpus530"), 32);
  return m;
}

inline ag::Var* param(nn::Module& m, const std::string& name) {
  for (auto& [n, v] : m.parameters())
    if (n == name) return v;
  throw std::runtime_error("no parameter " + name);
}

/// Puts the depth head around the foreground threshold so roughly half the
/// pixels of any image count as foreground.
inline void center_depth_head(prior::Reconstructor& r) {
  param(r, "head_out.bias")->mutable_value().data[3] = std::atanh(prior::kForegroundDepth);
}

/// Untrained teacher plus a pseudo-GT set extracted with it.
struct ToyPrior {
  RunConfig config;
  prior::Reconstructor recon;
  prior::Toy2DGenerator gen;
  prior::PseudoGTDataset data;
};

inline const ToyPrior& toy_prior() {
  static const ToyPrior p = [] {
    ToyPrior t;
    t.config = RunConfig::tiny();
    t.config.prior.fg_min = 0.01;
    t.config.prior.fg_max = 0.99;
    Rng rng(12);
    t.recon = prior::Reconstructor(t.config.model, rng);
    center_depth_head(t.recon);
    t.recon.set_trainable(false);
    t.gen = prior::Toy2DGenerator(t.config.model, rng);
    t.gen.set_trainable(false);
    t.data = prior::extract_pseudo_gt(t.recon, t.gen, small_corpus(), 6, 40, 3, scratch("toy_prior"), t.config);
    return t;
  }();
  return p;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace hgen::testing
