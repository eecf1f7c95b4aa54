#include "relmap/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

#include "relmap/rng.hpp"

namespace relmap {

namespace {

// gzread handles both gzip and plain files.
std::vector<unsigned char> read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw IoError("cannot open " + path);
  }
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) {
    out.insert(out.end(), buf, buf + n);
  }
  const bool bad = n < 0;
  gzclose(f);
  if (bad) {
    throw FormatError("gzip read failure in " + path);
  }
  return out;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::string& path) {
  if (off + 4 > b.size()) {
    std::ostringstream os;
    os << path << ": truncated at byte offset " << off << ", file has "
       << b.size() << " bytes";
    throw FormatError(os.str());
  }
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (a + 1) +
                    0xBF58476D1CE4E5B9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  const auto ib = read_all(images_path);
  const auto lb = read_all(labels_path);

  const std::uint32_t imagic = read_be32(ib, 0, images_path);
  if (imagic != 0x00000803u) {
    std::ostringstream os;
    os << images_path << ": bad image magic 0x" << std::hex << imagic
       << " at byte offset 0 (expected 0x803)";
    throw FormatError(os.str());
  }
  const std::uint32_t n = read_be32(ib, 4, images_path);
  const std::uint32_t rows = read_be32(ib, 8, images_path);
  const std::uint32_t cols = read_be32(ib, 12, images_path);
  const std::size_t pixels = std::size_t(n) * rows * cols;
  if (ib.size() != 16 + pixels) {
    std::ostringstream os;
    os << images_path << ": expected " << 16 + pixels << " bytes, got "
       << ib.size();
    throw FormatError(os.str());
  }

  const std::uint32_t lmagic = read_be32(lb, 0, labels_path);
  if (lmagic != 0x00000801u) {
    std::ostringstream os;
    os << labels_path << ": bad label magic 0x" << std::hex << lmagic
       << " at byte offset 0 (expected 0x801)";
    throw FormatError(os.str());
  }
  const std::uint32_t ln = read_be32(lb, 4, labels_path);
  if (lb.size() != 8 + ln) {
    std::ostringstream os;
    os << labels_path << ": expected " << 8 + std::size_t(ln) << " bytes, got "
       << lb.size();
    throw FormatError(os.str());
  }
  if (ln != n) {
    std::ostringstream os;
    os << "image/label count mismatch: " << n << " images vs " << ln
       << " labels";
    throw FormatError(os.str());
  }

  LabeledDataset ds;
  const std::size_t d = std::size_t(rows) * cols;
  ds.images = Tensor::matrix(n, d);
  for (std::size_t i = 0; i < pixels; ++i) {
    ds.images[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  ds.labels.resize(ln);
  for (std::uint32_t i = 0; i < ln; ++i) {
    ds.labels[i] = static_cast<int>(lb[8 + i]);
    if (ds.labels[i] < 0 || ds.labels[i] > 9) {
      std::ostringstream os;
      os << labels_path << ": label " << ds.labels[i] << " out of range at row "
         << i;
      throw FormatError(os.str());
    }
  }
  return ds;
}

TaskStream TaskStream::make_permuted(LabeledDataset train_base,
                                     LabeledDataset test_base,
                                     std::size_t tasks, std::uint64_t seed,
                                     std::size_t batch_size,
                                     double val_fraction) {
  if (tasks < 1) throw ConfigError("make_permuted: need at least one task");
  TaskStream s;
  s.train_base_ = std::move(train_base);
  s.test_base_ = std::move(test_base);
  s.seed_ = seed;
  s.batch_size_ = batch_size;

  // 90-10 train/val split, shared across tasks (pixels differ, rows do not)
  std::vector<std::uint32_t> order(s.train_base_.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng split_rng(mix_seed(seed, 0xDA7A, 0));
  split_rng.shuffle(order);
  const std::size_t val_n =
      static_cast<std::size_t>(val_fraction * static_cast<double>(order.size()));
  std::vector<std::uint32_t> val(order.begin(), order.begin() + val_n);
  std::vector<std::uint32_t> train(order.begin() + val_n, order.end());
  std::vector<std::uint32_t> test(s.test_base_.size());
  std::iota(test.begin(), test.end(), 0u);

  const std::size_t d = s.train_base_.images.cols();
  for (std::size_t t = 0; t < tasks; ++t) {
    s.train_idx_.push_back(train);
    s.val_idx_.push_back(val);
    s.test_idx_.push_back(test);
    if (t == 0) {
      s.perms_.emplace_back();  // identity
    } else {
      std::vector<std::uint32_t> perm(d);
      std::iota(perm.begin(), perm.end(), 0u);
      Rng prng(mix_seed(seed, 0x9E12, t));
      prng.shuffle(perm);
      s.perms_.push_back(std::move(perm));
    }
  }
  return s;
}

TaskStream TaskStream::make_split(LabeledDataset train_base,
                                  LabeledDataset test_base, std::uint64_t seed,
                                  std::size_t batch_size, double val_fraction) {
  TaskStream s;
  s.train_base_ = std::move(train_base);
  s.test_base_ = std::move(test_base);
  s.seed_ = seed;
  s.batch_size_ = batch_size;

  for (int pair = 0; pair < 5; ++pair) {
    const int lo = 2 * pair, hi = 2 * pair + 1;
    std::vector<std::uint32_t> rows;
    for (std::uint32_t i = 0; i < s.train_base_.size(); ++i) {
      const int lab = s.train_base_.labels[i];
      if (lab == lo || lab == hi) rows.push_back(i);
    }
    Rng split_rng(mix_seed(seed, 0xDA7A, pair));
    split_rng.shuffle(rows);
    const std::size_t val_n =
        static_cast<std::size_t>(val_fraction * static_cast<double>(rows.size()));
    s.val_idx_.emplace_back(rows.begin(), rows.begin() + val_n);
    s.train_idx_.emplace_back(rows.begin() + val_n, rows.end());
    std::vector<std::uint32_t> test;
    for (std::uint32_t i = 0; i < s.test_base_.size(); ++i) {
      const int lab = s.test_base_.labels[i];
      if (lab == lo || lab == hi) test.push_back(i);
    }
    s.test_idx_.push_back(std::move(test));
    s.perms_.emplace_back();
  }
  return s;
}

void TaskStream::set_fuzzy(std::size_t ramp) {
  if (ramp < 1) throw ConfigError("set_fuzzy: ramp must be >= 1 batch");
  ramp_ = ramp;
}

std::vector<BatchRef> TaskStream::epoch_refs(std::size_t task,
                                             std::size_t epoch) const {
  std::vector<std::uint32_t> order = train_idx_[task];
  Rng rng(mix_seed(seed_, task + 1, epoch + 1));
  rng.shuffle(order);
  std::vector<BatchRef> refs;
  for (std::size_t i = 0; i < order.size(); i += batch_size_) {
    BatchRef ref;
    const std::size_t end = std::min(order.size(), i + batch_size_);
    for (std::size_t j = i; j < end; ++j) {
      ref.items.emplace_back(static_cast<int>(task), order[j]);
    }
    refs.push_back(std::move(ref));
  }
  return refs;
}

FlatStream TaskStream::flat_stream(std::size_t epochs_per_task) const {
  // Per-task FIFO of samples, in clean-stream order.
  std::vector<std::vector<std::pair<int, std::uint32_t>>> queues(task_count());
  for (std::size_t t = 0; t < task_count(); ++t) {
    for (std::size_t e = 0; e < epochs_per_task; ++e) {
      for (const BatchRef& ref : epoch_refs(t, e)) {
        queues[t].insert(queues[t].end(), ref.items.begin(), ref.items.end());
      }
    }
  }
  FlatStream out;
  std::vector<std::size_t> heads(task_count(), 0);
  auto remaining = [&](std::size_t t) { return queues[t].size() - heads[t]; };
  auto take = [&](std::size_t t, std::size_t n, BatchRef& ref) {
    for (std::size_t i = 0; i < n && heads[t] < queues[t].size(); ++i) {
      ref.items.push_back(queues[t][heads[t]++]);
    }
  };
  Rng mix_rng(mix_seed(seed_, 0xF022, 0));
  for (std::size_t t = 0; t < task_count(); ++t) {
    const bool has_next = t + 1 < task_count();
    std::size_t old_for_ramp = 0;
    std::vector<std::size_t> new_per_ramp_batch;
    if (has_next && ramp_ > 0) {
      for (std::size_t b = 0; b < ramp_; ++b) {
        const std::size_t n_new = static_cast<std::size_t>(std::llround(
            static_cast<double>(batch_size_) * static_cast<double>(b + 1) /
            static_cast<double>(ramp_ + 1)));
        new_per_ramp_batch.push_back(n_new);
        old_for_ramp += batch_size_ - n_new;
      }
    }
    // plain batches of task t until only the ramp's old quota remains
    while (remaining(t) > old_for_ramp) {
      BatchRef ref;
      take(t, std::min(batch_size_, remaining(t) - old_for_ramp), ref);
      if (out.boundaries.size() < t) out.boundaries.push_back(out.refs.size());
      out.refs.push_back(std::move(ref));
    }
    if (has_next && ramp_ > 0) {
      for (std::size_t b = 0; b < ramp_; ++b) {
        BatchRef ref;
        take(t, batch_size_ - new_per_ramp_batch[b], ref);
        take(t + 1, new_per_ramp_batch[b], ref);
        mix_rng.shuffle(ref.items);
        if (out.boundaries.size() < t + 1 && !ref.items.empty() &&
            b == 0) {
          out.boundaries.push_back(out.refs.size());
        }
        out.refs.push_back(std::move(ref));
      }
    }
  }
  // clean-cut boundaries: first batch of each task t >= 1
  if (ramp_ == 0) {
    out.boundaries.clear();
    std::size_t idx = 0;
    std::vector<bool> seen(task_count(), false);
    for (const BatchRef& ref : out.refs) {
      for (const auto& item : ref.items) {
        if (item.first > 0 && !seen[item.first]) {
          seen[item.first] = true;
          out.boundaries.push_back(idx);
        }
      }
      ++idx;
    }
  }
  return out;
}

Tensor TaskStream::rows_for(
    const std::vector<std::pair<int, std::uint32_t>>& items,
    const Tensor& base) const {
  const std::size_t d = base.cols();
  Tensor x = Tensor::matrix(items.size(), d);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& [task, row] = items[i];
    const std::vector<std::uint32_t>& perm = perms_[task];
    if (perm.empty()) {
      std::memcpy(&x.data()[i * d], &base.data()[std::size_t(row) * d],
                  d * sizeof(double));
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        x.at(i, j) = base.at(row, perm[j]);
      }
    }
  }
  return x;
}

Batch TaskStream::materialize(const BatchRef& ref) const {
  Batch b;
  b.x = rows_for(ref.items, train_base_.images);
  b.y.reserve(ref.items.size());
  b.task_of.reserve(ref.items.size());
  for (const auto& [task, row] : ref.items) {
    b.y.push_back(train_base_.labels[row]);
    b.task_of.push_back(task);
  }
  return b;
}

LabeledDataset TaskStream::val_set(std::size_t task) const {
  std::vector<std::pair<int, std::uint32_t>> items;
  for (std::uint32_t row : val_idx_[task]) {
    items.emplace_back(static_cast<int>(task), row);
  }
  LabeledDataset ds;
  ds.images = rows_for(items, train_base_.images);
  for (std::uint32_t row : val_idx_[task]) {
    ds.labels.push_back(train_base_.labels[row]);
  }
  return ds;
}

LabeledDataset TaskStream::test_set(std::size_t task) const {
  std::vector<std::pair<int, std::uint32_t>> items;
  for (std::uint32_t row : test_idx_[task]) {
    items.emplace_back(static_cast<int>(task), row);
  }
  LabeledDataset ds;
  ds.images = rows_for(items, test_base_.images);
  for (std::uint32_t row : test_idx_[task]) {
    ds.labels.push_back(test_base_.labels[row]);
  }
  return ds;
}

}  // namespace relmap
