#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "sslbd/rng.hpp"

namespace sslbd {

/// Fixed-capacity FIFO ring of unit-norm d-vectors. Used as the MoCo
/// negative queue and the MSF memory bank.
class FeatureQueue {
 public:
  FeatureQueue() = default;
  FeatureQueue(int64_t capacity, int64_t dim);

  /// Fills every slot with normalized Gaussian vectors drawn from `seed`.
  void fill_random(uint64_t seed);

  /// Appends rows (normalized on entry) and overwrites the oldest once full.
  void enqueue(const torch::Tensor& rows);

  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }
  int64_t size() const { return size_; }
  int64_t cursor() const { return cursor_; }

  /// Occupied rows in storage order (not FIFO order); no gradient.
  torch::Tensor view() const;
  /// Occupied rows ordered oldest first.
  torch::Tensor ordered() const;

  const torch::Tensor& storage() const { return storage_; }
  /// Restores state written by storage()/cursor()/size().
  void restore(const torch::Tensor& storage, int64_t cursor, int64_t size);

 private:
  int64_t capacity_ = 0;
  int64_t dim_ = 0;
  int64_t cursor_ = 0;
  int64_t size_ = 0;
  torch::Tensor storage_;
};

}  // namespace sslbd
