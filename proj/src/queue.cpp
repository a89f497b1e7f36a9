#include "sslbd/queue.hpp"

#include "sslbd/errors.hpp"

namespace sslbd {

FeatureQueue::FeatureQueue(int64_t capacity, int64_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity <= 0 || dim <= 0) throw ConfigError("queue capacity and dimension must be positive");
  storage_ = torch::zeros({capacity, dim});
}

void FeatureQueue::fill_random(uint64_t seed) {
  Rng rng = make_rng(seed);
  auto acc = storage_.accessor<float, 2>();
  for (int64_t i = 0; i < capacity_; ++i) {
    for (int64_t j = 0; j < dim_; ++j) acc[i][j] = static_cast<float>(standard_normal(rng));
  }
  storage_ = torch::nn::functional::normalize(storage_, torch::nn::functional::NormalizeFuncOptions().dim(1));
  cursor_ = 0;
  size_ = capacity_;
}

void FeatureQueue::enqueue(const torch::Tensor& rows) {
  torch::NoGradGuard guard;
  if (rows.dim() != 2 || rows.size(1) != dim_) throw ConfigError("enqueue width mismatch");
  auto unit = torch::nn::functional::normalize(rows.detach().to(torch::kFloat),
                                               torch::nn::functional::NormalizeFuncOptions().dim(1));
  const int64_t n = unit.size(0);
  for (int64_t i = 0; i < n; ++i) {
    storage_[cursor_].copy_(unit[i]);
    cursor_ = (cursor_ + 1) % capacity_;
  }
  size_ = std::min(capacity_, size_ + n);
}

torch::Tensor FeatureQueue::view() const {
  return size_ == capacity_ ? storage_ : storage_.narrow(0, 0, size_);
}

torch::Tensor FeatureQueue::ordered() const {
  if (size_ < capacity_) return storage_.narrow(0, 0, size_).clone();
  return torch::cat({storage_.narrow(0, cursor_, capacity_ - cursor_), storage_.narrow(0, 0, cursor_)}, 0);
}

void FeatureQueue::restore(const torch::Tensor& storage, int64_t cursor, int64_t size) {
  if (storage.dim() != 2 || cursor < 0 || cursor >= storage.size(0) || size < 0 || size > storage.size(0)) {
    throw DataError("corrupt queue state");
  }
  storage_ = storage.clone();
  capacity_ = storage.size(0);
  dim_ = storage.size(1);
  cursor_ = cursor;
  size_ = size;
}

}  // namespace sslbd
