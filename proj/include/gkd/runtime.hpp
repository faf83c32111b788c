#pragma once

namespace gkd {

/// Keeps large temporaries on the heap instead of fresh mmap pages. Training
/// allocates many short-lived matrices above the default mmap threshold, and
/// mapping and faulting them in otherwise costs as much as the arithmetic.
/// A no-op outside glibc.
void tune_allocator();

}  // namespace gkd
