// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string>

#include "convbn/errors.hpp"
#include "convbn/kernels.hpp"

namespace convbn::kernels {

#if !CONVBN_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !CONVBN_HAVE_NEON
const KernelTable* neon_table() { return nullptr; }
#endif

namespace {

const KernelTable* table_for(Backend backend) {
  switch (backend) {
    case Backend::Scalar:
      return &scalar_table();
    case Backend::Avx2:
      return avx2_table();
    case Backend::Neon:
      return neon_table();
    case Backend::Auto:
      break;
  }
  if (const auto* t = avx2_table()) return t;
  if (const auto* t = neon_table()) return t;
  return &scalar_table();
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("CONVBN_KERNELS")) {
    const auto backend = parse_backend(env);
    if (const auto* t = table_for(backend)) return t;
    throw InputError(std::string("CONVBN_KERNELS=") + env + " is not supported on this machine");
  }
  return table_for(Backend::Auto);
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> out{&scalar_table()};
  if (const auto* t = avx2_table()) out.push_back(t);
  if (const auto* t = neon_table()) out.push_back(t);
  return out;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

void select(Backend backend) {
  const auto* t = table_for(backend);
  if (!t) throw InputError("requested kernel backend is not available on this machine");
  active_slot().store(t, std::memory_order_release);
}

Backend parse_backend(std::string_view name) {
  if (name == "auto") return Backend::Auto;
  if (name == "scalar") return Backend::Scalar;
  if (name == "avx2") return Backend::Avx2;
  if (name == "neon") return Backend::Neon;
  throw InputError("unknown kernel backend '" + std::string(name) + "'");
}

}  // namespace convbn::kernels
