// SPDX-License-Identifier: Apache-2.0
//
// Small shared fixtures: a 4-class toy problem with four briefly trained
// teachers, and scratch directories.
#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <unistd.h>

#include "ufc/data/dataset.hpp"
#include "ufc/distill/distill.hpp"
#include "ufc/nn/train.hpp"

namespace ufc::test {

inline constexpr nn::ArchitectureId kAllArchs[] = {nn::ArchitectureId::A1, nn::ArchitectureId::A2,
                                                   nn::ArchitectureId::A3, nn::ArchitectureId::A4};

struct SmallWorld {
  data::ToyDataset toy;
  std::vector<nn::Model> teachers;  // A1..A4
};

/// C = 4, d = 16, 30 per class; teachers trained for 15 epochs. Built once per process.
inline const SmallWorld& small_world() {
  static const SmallWorld world = [] {
    SmallWorld w;
    data::ToyParams p;
    p.classes = 4;
    p.dim = 16;
    p.n_per_class = 30;
    p.spread = 0.2;
    p.seed = 3;
    w.toy = data::generate_toy_dataset(p);
    nn::TeacherRecipe r;
    r.epochs = 15;
    r.batch_size = 16;
    r.target_accuracy = 0.0;
    for (auto a : kAllArchs) w.teachers.push_back(nn::train_teacher(w.toy.train, {a, 16, 4}, r).model);
    return w;
  }();
  return world;
}

inline distill::Ensemble small_ensemble(std::size_t m = 4) {
  const auto& t = small_world().teachers;
  return distill::Ensemble(std::vector<nn::Model>(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(m)));
}

/// A fresh, empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("ufckit-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Concatenated bytes of every regular file under `dir`, in sorted path order.
inline std::string tree_bytes(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) {
    out += std::filesystem::relative(f, dir).string();
    out += '\0';
    out += file_bytes(f);
  }
  return out;
}

}  // namespace ufc::test
