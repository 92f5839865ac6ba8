//! Allocation counters for the complexity benchmarks.
//!
//! Binaries and test targets that want byte-accurate peak measurements
//! install [`TrackingAllocator`] as their global allocator:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: fstripe_core::alloc_track::TrackingAllocator =
//!     fstripe_core::alloc_track::TrackingAllocator::system();
//! ```
//!
//! The counters live in this crate so library code can read the numbers
//! regardless of which crate installed the allocator. Without the wrapper
//! installed, every reading is zero.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static MARK: AtomicUsize = AtomicUsize::new(0);

/// System allocator wrapper that maintains live/peak byte counters.
pub struct TrackingAllocator {
    inner: System,
}

impl TrackingAllocator {
    pub const fn system() -> Self {
        TrackingAllocator { inner: System }
    }
}

fn on_alloc(size: usize) {
    let live = LIVE.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(live, Ordering::Relaxed);
}

fn on_dealloc(size: usize) {
    LIVE.fetch_sub(size, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = unsafe { self.inner.alloc(layout) };
        if !ptr.is_null() {
            on_alloc(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { self.inner.dealloc(ptr, layout) };
        on_dealloc(layout.size());
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = unsafe { self.inner.alloc_zeroed(layout) };
        if !ptr.is_null() {
            on_alloc(layout.size());
        }
        ptr
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let out = unsafe { self.inner.realloc(ptr, layout, new_size) };
        if !out.is_null() {
            on_dealloc(layout.size());
            on_alloc(new_size);
        }
        out
    }
}

/// Starts a measurement window at the current live byte count.
pub fn reset_window() {
    let live = LIVE.load(Ordering::Relaxed);
    MARK.store(live, Ordering::Relaxed);
    PEAK.store(live, Ordering::Relaxed);
}

/// Peak bytes allocated above the window's starting point.
pub fn peak_extra_bytes() -> usize {
    PEAK.load(Ordering::Relaxed).saturating_sub(MARK.load(Ordering::Relaxed))
}

/// True when a tracking allocator has recorded any traffic, i.e. the
/// wrapper is installed in this process.
pub fn is_active() -> bool {
    LIVE.load(Ordering::Relaxed) != 0 || PEAK.load(Ordering::Relaxed) != 0
}
