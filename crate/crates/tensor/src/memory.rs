//! Allocator tuning for tape-heavy workloads.

/// Asks the C allocator to keep freed memory instead of returning it to the
/// kernel. Every training batch frees and reallocates a tape of a few hundred
/// megabytes; on hosts where page faults are slow, returning that memory
/// dominates the run time. No-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| unsafe {
            // 32 MiB is the largest threshold glibc accepts on 64-bit targets.
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        });
    }
}
