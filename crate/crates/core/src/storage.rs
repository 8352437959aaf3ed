//! Vector storage that spills Krylov basis vectors to memory-mapped temp
//! files once resident vectors exceed a RAM budget.
//!
//! The budget is `PINT_MK_RAM_BUDGET_MB` if set, otherwise 70% of the
//! available memory reported by `/proc/meminfo` (2 GiB if unknown).

use memmap2::MmapMut;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

static RESIDENT: AtomicUsize = AtomicUsize::new(0);
static BUDGET: OnceLock<usize> = OnceLock::new();

fn available_bytes() -> Option<usize> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn ram_budget_bytes() -> usize {
    *BUDGET.get_or_init(|| {
        if let Some(mb) = std::env::var("PINT_MK_RAM_BUDGET_MB").ok().and_then(|s| s.parse::<usize>().ok()) {
            return mb << 20;
        }
        available_bytes().map(|b| b / 100 * 70).unwrap_or(2 << 30)
    })
}

/// Bytes currently held by RAM-resident buffers.
pub fn resident_bytes() -> usize {
    RESIDENT.load(Ordering::Relaxed)
}

enum Inner {
    Ram(Vec<f64>),
    Mapped(MmapMut),
}

/// A zero-initialized `f64` buffer in RAM or in a memory-mapped temp file.
pub struct Buffer {
    inner: Inner,
    len: usize,
}

impl Buffer {
    pub fn zeros(len: usize) -> Self {
        RESIDENT.fetch_add(len * 8, Ordering::Relaxed);
        Self { inner: Inner::Ram(vec![0.0; len]), len }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        RESIDENT.fetch_add(v.len() * 8, Ordering::Relaxed);
        let len = v.len();
        Self { inner: Inner::Ram(v), len }
    }

    /// RAM if it fits the budget, otherwise a file-backed mapping.
    pub fn zeros_spillable(len: usize) -> Self {
        Self::zeros_spillable_reserving(len, 0)
    }

    /// Like [`Buffer::zeros_spillable`], keeping `reserve` bytes of the budget
    /// free for allocations that come later.
    pub fn zeros_spillable_reserving(len: usize, reserve: usize) -> Self {
        if len == 0 || resident_bytes() + len * 8 + reserve <= ram_budget_bytes() {
            return Self::zeros(len);
        }
        match Self::mapped(len) {
            Ok(b) => b,
            Err(_) => Self::zeros(len),
        }
    }

    fn mapped(len: usize) -> std::io::Result<Self> {
        let file = tempfile::tempfile()?;
        file.set_len((len * 8) as u64)?;
        // SAFETY: the file is private to this process and unlinked, so no
        // other mapping or writer can alias it.
        let map = unsafe { MmapMut::map_mut(&file)? };
        Ok(Self { inner: Inner::Mapped(map), len })
    }

    pub fn is_mapped(&self) -> bool {
        matches!(self.inner, Inner::Mapped(_))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.to_vec()
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        if let Inner::Ram(_) = self.inner {
            RESIDENT.fetch_sub(self.len * 8, Ordering::Relaxed);
        }
    }
}

impl Deref for Buffer {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match &self.inner {
            Inner::Ram(v) => v,
            Inner::Mapped(m) => {
                let (pre, mid, _) = unsafe { m.align_to::<f64>() };
                debug_assert!(pre.is_empty());
                &mid[..self.len]
            }
        }
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        match &mut self.inner {
            Inner::Ram(v) => v,
            Inner::Mapped(m) => {
                let (pre, mid, _) = unsafe { m.align_to_mut::<f64>() };
                debug_assert!(pre.is_empty());
                &mut mid[..self.len]
            }
        }
    }
}

impl std::fmt::Debug for Buffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Buffer(len={}, mapped={})", self.len, self.is_mapped())
    }
}
