// SPDX-License-Identifier: MIT
#pragma once

// Deterministic parallel ensemble driver.  Particles are processed in
// fixed-size index chunks; worker threads claim chunks through an atomic
// cursor, accumulate into chunk-local states, and the driver folds finished
// chunks into a running prefix strictly in chunk order.  Because the chunk
// partition depends only on the particle index (never on thread count or
// scheduling), the fold is the same floating-point computation for any
// thread count — results are bit-identical.
//
// Checkpoints persist the prefix state at a chunk boundary together with the
// identity of the run (configuration hash, master seed, parameter hash), so
// an interrupted run resumes into the exact same fold and reproduces the
// uninterrupted output byte for byte.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "tube/errors.hpp"
#include "tube/philox.hpp"
#include "tube/serialize.hpp"

namespace tube {

struct EnsembleOptions {
  std::uint64_t master_seed = 0;
  std::uint64_t particles = 0;
  int threads = 1;
  std::uint64_t chunk = 64;  // particles per work chunk; fixed => reproducible

  // Checkpointing (disabled while the path is empty).
  std::string checkpoint_path;
  std::uint64_t checkpoint_every = 0;  // particles between periodic writes
  std::uint64_t config_hash = 0;
  std::uint64_t params_hash = 0;

  // Testing hook: pause (with a checkpoint, if enabled) once at least this
  // many particles are done.  0 = run to completion.
  std::uint64_t stop_after = 0;
};

template <class Acc>
struct EnsembleResult {
  Acc value;
  std::uint64_t completed = 0;
  bool finished = false;
};

namespace detail {

inline constexpr std::uint64_t kCheckpointMagic = 0x54504B4345425554ULL;
inline constexpr std::uint64_t kCheckpointVersion = 1;

template <class Acc>
void write_checkpoint(const EnsembleOptions& opt, const Acc& acc,
                      std::uint64_t completed) {
  BinaryWriter w;
  w.put_u64(kCheckpointMagic);
  w.put_u64(kCheckpointVersion);
  w.put_u64(opt.config_hash);
  w.put_u64(opt.master_seed);
  w.put_u64(opt.params_hash);
  w.put_u64(opt.particles);
  w.put_u64(completed);
  BinaryWriter payload;
  acc.save(payload);
  w.put_bytes(payload.bytes());
  const std::uint64_t sum = fnv1a_64(w.bytes());

  const std::filesystem::path path(opt.checkpoint_path);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os.write(w.bytes().data(),
             static_cast<std::streamsize>(w.bytes().size()));
    BinaryWriter tail;
    tail.put_u64(sum);
    os.write(tail.bytes().data(), 8);
    if (!os) throw Error("checkpoint write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Returns the number of already-completed particles, loading their merged
// state into `acc`.
template <class Acc>
std::uint64_t read_checkpoint(const EnsembleOptions& opt, Acc& acc) {
  std::ifstream is(opt.checkpoint_path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 8 * 8) {
    throw CorruptCheckpoint("checkpoint file is too short");
  }
  const std::string_view body(bytes.data(), bytes.size() - 8);
  BinaryReader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.take_u64() != fnv1a_64(body)) {
    throw CorruptCheckpoint("checkpoint checksum mismatch");
  }

  BinaryReader r(body);
  if (r.take_u64() != kCheckpointMagic) {
    throw CorruptCheckpoint("not a checkpoint file");
  }
  if (r.take_u64() != kCheckpointVersion) {
    throw CheckpointVersionMismatch("checkpoint format version differs");
  }
  if (r.take_u64() != opt.config_hash) {
    throw ConfigError("checkpoint belongs to a different configuration");
  }
  if (r.take_u64() != opt.master_seed) {
    throw ConfigError("checkpoint belongs to a different master seed");
  }
  if (r.take_u64() != opt.params_hash) {
    throw ConfigError("checkpoint belongs to different run parameters");
  }
  if (r.take_u64() != opt.particles) {
    throw ConfigError("checkpoint belongs to a different particle count");
  }
  const std::uint64_t completed = r.take_u64();
  BinaryReader payload(r.take_bytes());
  acc.load(payload);
  if (completed > opt.particles || completed % opt.chunk != 0) {
    throw CorruptCheckpoint("checkpoint frontier is not a chunk boundary");
  }
  return completed;
}

}  // namespace detail

// Runs `body(acc, particle_index, stream)` for indices [0, opt.particles),
// folding chunk results in index order.  `make()` produces an empty,
// correctly shaped accumulator; Acc needs merge/save/load.
template <class Make, class Body>
auto run_ensemble(const EnsembleOptions& opt, Make&& make, Body&& body)
    -> EnsembleResult<std::decay_t<decltype(make())>> {
  using Acc = std::decay_t<decltype(make())>;
  if (opt.chunk == 0) throw DomainError("ensemble chunk size must be > 0");

  EnsembleResult<Acc> result{make(), 0, false};
  std::uint64_t done = 0;
  if (!opt.checkpoint_path.empty() &&
      std::filesystem::exists(opt.checkpoint_path)) {
    done = detail::read_checkpoint(opt, result.value);
  }
  std::uint64_t last_written = done;

  const int threads = opt.threads > 1 ? opt.threads : 1;
  while (done < opt.particles) {
    if (opt.stop_after != 0 && done >= opt.stop_after) {
      if (!opt.checkpoint_path.empty() && done != last_written) {
        detail::write_checkpoint(opt, result.value, done);
      }
      result.completed = done;
      return result;
    }

    // One round: up to threads*4 chunks, claimed atomically, folded in order.
    const std::uint64_t round_span =
        std::min(opt.particles - done,
                 opt.chunk * static_cast<std::uint64_t>(threads) * 4);
    const std::uint64_t nchunks = (round_span + opt.chunk - 1) / opt.chunk;

    std::vector<Acc> slots;
    slots.reserve(nchunks);
    for (std::uint64_t j = 0; j < nchunks; ++j) slots.push_back(make());

    std::atomic<std::uint64_t> cursor{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
      for (;;) {
        const std::uint64_t j = cursor.fetch_add(1);
        if (j >= nchunks || failed.load(std::memory_order_relaxed)) return;
        const std::uint64_t lo = done + j * opt.chunk;
        const std::uint64_t hi = std::min(done + round_span, lo + opt.chunk);
        try {
          for (std::uint64_t i = lo; i < hi; ++i) {
            RandomStream stream = derive_stream(opt.master_seed, i);
            body(slots[j], i, stream);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true, std::memory_order_relaxed);
          return;
        }
      }
    };

    const int active = static_cast<int>(
        std::min<std::uint64_t>(static_cast<std::uint64_t>(threads), nchunks));
    if (active <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(active));
      for (int k = 0; k < active; ++k) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    for (auto& slot : slots) result.value.merge(slot);
    done += round_span;

    if (!opt.checkpoint_path.empty() && opt.checkpoint_every != 0 &&
        done - last_written >= opt.checkpoint_every && done < opt.particles) {
      detail::write_checkpoint(opt, result.value, done);
      last_written = done;
    }
  }

  // A finished run needs no resume state.
  if (!opt.checkpoint_path.empty()) {
    std::error_code ec;
    std::filesystem::remove(opt.checkpoint_path, ec);
  }
  result.completed = done;
  result.finished = true;
  return result;
}

}  // namespace tube
