//! Scoped flush-to-zero for subnormal floats. Late in training, activations
//! and gradients drift into the subnormal range, where every multiply-add
//! takes a microcode assist.

pub(crate) struct FlushDenormals {
    #[cfg(any(target_arch = "x86_64", target_arch = "x86"))]
    saved: u32,
}

#[cfg(any(target_arch = "x86_64", target_arch = "x86"))]
#[allow(deprecated)]
mod csr {
    #[cfg(target_arch = "x86")]
    use std::arch::x86::{_mm_getcsr, _mm_setcsr};
    #[cfg(target_arch = "x86_64")]
    use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};

    /// Flush-to-zero and denormals-are-zero bits of MXCSR.
    const FTZ_DAZ: u32 = 0x8040;

    pub(super) fn enable() -> u32 {
        // SAFETY: only the FTZ and DAZ control bits change.
        unsafe {
            let saved = _mm_getcsr();
            _mm_setcsr(saved | FTZ_DAZ);
            saved
        }
    }

    pub(super) fn restore(saved: u32) {
        // SAFETY: restores a value read from the register.
        unsafe { _mm_setcsr(saved) }
    }
}

impl FlushDenormals {
    pub(crate) fn new() -> Self {
        Self {
            #[cfg(any(target_arch = "x86_64", target_arch = "x86"))]
            saved: csr::enable(),
        }
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(any(target_arch = "x86_64", target_arch = "x86"))]
        csr::restore(self.saved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subnormals_flush_inside_the_scope_only() {
        let tiny = std::hint::black_box(f32::MIN_POSITIVE);
        {
            let _guard = FlushDenormals::new();
            let sub = std::hint::black_box(tiny) / std::hint::black_box(4.0f32);
            if cfg!(any(target_arch = "x86_64", target_arch = "x86")) {
                assert_eq!(sub, 0.0);
            }
        }
        let sub = std::hint::black_box(tiny) / std::hint::black_box(4.0f32);
        assert!(sub > 0.0 && !sub.is_normal());
    }
}
