#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpnet/io.hpp"
#include "mpnet/tensor.hpp"

namespace mpnet {

struct CheckpointMeta {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint32_t epochs_done = 0;
  std::uint64_t global_step = 0;
  bool hash_matches = true;  // set by load when an expected hash is supplied
};

// Layout: "MPCK", version u32=1, config hash u64, config text, epochs u32,
// global step u64, block count u64, then per parameter: name, rows u64,
// cols u64, values f64, first moment f64, second moment f64, step u64.
// Optimizer state rides along so a resumed run continues bit for bit.
inline void save_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params,
                            const CheckpointMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(FormatError::Kind::io, "cannot open for write: " + path);
  os.write("MPCK", 4);
  detail::write_pod(os, std::uint32_t{1});
  detail::write_pod(os, meta.config_hash);
  detail::write_string(os, meta.config_text);
  detail::write_pod(os, meta.epochs_done);
  detail::write_pod(os, meta.global_step);
  detail::write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const Parameter* p : params) {
    detail::write_string(os, p->name);
    detail::write_pod(os, static_cast<std::uint64_t>(p->tensor.rows));
    detail::write_pod(os, static_cast<std::uint64_t>(p->tensor.cols));
    detail::write_array(os, p->tensor.data);
    detail::write_array(os, p->m1);
    detail::write_array(os, p->m2);
    detail::write_pod(os, static_cast<std::uint64_t>(p->step_count));
  }
  if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

namespace detail {
inline CheckpointMeta read_mpck_header(std::istream& is, const std::string& path) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MPCK")
    throw FormatError(FormatError::Kind::bad_magic, "not an MPCK file: " + path);
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != 1)
    throw FormatError(FormatError::Kind::bad_version,
                      "unsupported MPCK version " + std::to_string(version));
  CheckpointMeta meta;
  read_pod(is, meta.config_hash);
  meta.config_text = read_string(is);
  read_pod(is, meta.epochs_done);
  read_pod(is, meta.global_step);
  return meta;
}
}  // namespace detail

// Header only: enough to rebuild the model that the blocks will then fit.
inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open for read: " + path);
  return detail::read_mpck_header(is, path);
}

// Parameters must already have the shapes the model built; the file must
// carry exactly the same names in the same order. `expected_hash` of 0 skips
// the fingerprint comparison (the caller has no config to compare against).
inline CheckpointMeta load_checkpoint(const std::string& path,
                                      const std::vector<Parameter*>& params,
                                      std::uint64_t expected_hash = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open for read: " + path);
  CheckpointMeta meta = detail::read_mpck_header(is, path);
  std::uint64_t count = 0;
  detail::read_pod(is, count);
  if (count != params.size())
    throw FormatError(FormatError::Kind::truncated,
                      "checkpoint holds " + std::to_string(count) +
                          " parameters, model expects " +
                          std::to_string(params.size()));
  for (Parameter* p : params) {
    const std::string name = detail::read_string(is);
    std::uint64_t rows = 0, cols = 0;
    detail::read_pod(is, rows);
    detail::read_pod(is, cols);
    if (name != p->name || rows != static_cast<std::uint64_t>(p->tensor.rows) ||
        cols != static_cast<std::uint64_t>(p->tensor.cols))
      throw FormatError(FormatError::Kind::truncated,
                        "checkpoint block '" + name + "' does not fit parameter '" +
                            p->name + "'");
    detail::read_array(is, p->tensor.data, rows * cols);
    detail::read_array(is, p->m1, rows * cols);
    detail::read_array(is, p->m2, rows * cols);
    std::uint64_t steps = 0;
    detail::read_pod(is, steps);
    p->step_count = static_cast<std::int64_t>(steps);
    p->tensor.grad.reset();
  }
  if (expected_hash != 0) meta.hash_matches = meta.config_hash == expected_hash;
  return meta;
}

}  // namespace mpnet
