#include "basisprec/tasks.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

namespace basisprec::tasks {

CifarData load_cifar10_binary(const std::string& path, Index max_records) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("load_cifar10_binary: cannot open " + path + ": " + ec.message());
  if (size % static_cast<std::uintmax_t>(kCifarRecord) != 0) {
    throw IoError("load_cifar10_binary: " + path + " has " + std::to_string(size) +
                  " bytes, not a multiple of the 3073-byte record");
  }
  Index n = static_cast<Index>(size / static_cast<std::uintmax_t>(kCifarRecord));
  if (max_records >= 0) n = std::min(n, max_records);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_cifar10_binary: cannot open " + path);

  CifarData out{Matrix(kCifarPixels, n), Matrix::Zero(kCifarClasses, n), {}};
  out.labels.reserve(static_cast<std::size_t>(n));
  std::vector<unsigned char> rec(static_cast<std::size_t>(kCifarRecord));
  for (Index j = 0; j < n; ++j) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), kCifarRecord)) {
      throw IoError("load_cifar10_binary: short read in " + path + " at record " + std::to_string(j));
    }
    const int label = rec[0];
    if (label >= kCifarClasses) {
      throw InvalidInput("load_cifar10_binary: label byte " + std::to_string(label) + " at record " +
                         std::to_string(j));
    }
    out.labels.push_back(label);
    out.y(label, j) = 1.0;
    for (Index i = 0; i < kCifarPixels; ++i) {
      out.x(i, j) = static_cast<double>(rec[static_cast<std::size_t>(i + 1)]) / 255.0;
    }
  }
  return out;
}

std::shared_ptr<MlpTask> make_cifar_task(CifarData data, Index hidden, std::uint64_t seed) {
  if (data.x.cols() == 0) throw InvalidInput("make_cifar_task: no records");
  auto shared = std::make_shared<const CifarData>(std::move(data));
  BatchSampler sampler = [shared](Index n, Rng& rng) {
    std::uniform_int_distribution<Index> pick(0, shared->x.cols() - 1);
    models::Batch b{Matrix(kCifarPixels, n), Matrix(kCifarClasses, n)};
    for (Index j = 0; j < n; ++j) {
      const Index k = pick(rng);
      b.x.col(j) = shared->x.col(k);
      b.y.col(j) = shared->y.col(k);
    }
    return b;
  };
  models::MlpShape shape{kCifarPixels, hidden, kCifarClasses, models::Activation::Relu};
  return std::make_shared<MlpTask>("cifar10", shape, std::move(sampler), seed);
}

}  // namespace basisprec::tasks
