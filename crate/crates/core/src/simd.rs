//! Hot-loop kernels for the f32 training path.
//!
//! The convolution layers spend nearly all their time in two primitives over
//! contiguous rows: `dst += w * src` and a dot product. On x86-64 these
//! dispatch at runtime to AVX2+FMA versions when the CPU supports them; the
//! portable scalar versions are used everywhere else and for f64 (the 64-bit
//! mode exists for gradient checking, not throughput).

#[cfg(target_arch = "x86_64")]
mod detect {
    use core::arch::x86_64::{__cpuid, __cpuid_count, _xgetbv};
    use core::sync::atomic::{AtomicU8, Ordering};

    static LEVEL: AtomicU8 = AtomicU8::new(0);

    /// 1 = scalar, 2 = AVX2+FMA.
    pub fn level() -> u8 {
        let cached = LEVEL.load(Ordering::Relaxed);
        if cached != 0 {
            return cached;
        }
        let detected = detect();
        LEVEL.store(detected, Ordering::Relaxed);
        detected
    }

    fn detect() -> u8 {
        // SAFETY: cpuid is available on all x86-64 CPUs.
        unsafe {
            let f1 = __cpuid(1);
            let osxsave = f1.ecx & (1 << 27) != 0;
            let avx = f1.ecx & (1 << 28) != 0;
            let fma = f1.ecx & (1 << 12) != 0;
            if !(osxsave && avx && fma) {
                return 1;
            }
            // OS must have enabled XMM+YMM state saving.
            let xcr0 = _xgetbv(0);
            if xcr0 & 0x6 != 0x6 {
                return 1;
            }
            let f7 = __cpuid_count(7, 0);
            let avx2 = f7.ebx & (1 << 5) != 0;
            if avx2 {
                2
            } else {
                1
            }
        }
    }
}

/// dst[i] += w * src[i]
#[inline]
pub fn axpy(dst: &mut [f32], src: &[f32], w: f32) {
    debug_assert_eq!(dst.len(), src.len());
    #[cfg(target_arch = "x86_64")]
    {
        if detect::level() == 2 {
            // SAFETY: AVX2+FMA presence checked above.
            unsafe { axpy_avx2(dst, src, w) };
            return;
        }
    }
    axpy_scalar(dst, src, w);
}

/// sum_i a[i] * b[i]
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if detect::level() == 2 {
            // SAFETY: AVX2+FMA presence checked above.
            return unsafe { dot_avx2(a, b) };
        }
    }
    dot_scalar(a, b)
}

/// dst[i] += w * src[i], f64 lane (polynomial expansion, gradient checks).
#[inline]
pub fn axpy_f64(dst: &mut [f64], src: &[f64], w: f64) {
    debug_assert_eq!(dst.len(), src.len());
    #[cfg(target_arch = "x86_64")]
    {
        if detect::level() == 2 {
            // SAFETY: AVX2+FMA presence checked above.
            unsafe { axpy_f64_avx2(dst, src, w) };
            return;
        }
    }
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * *s;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_f64_avx2(dst: &mut [f64], src: &[f64], w: f64) {
    use core::arch::x86_64::*;
    let n = dst.len();
    let wv = _mm256_set1_pd(w);
    let mut i = 0;
    while i + 4 <= n {
        let d = _mm256_loadu_pd(dst.as_ptr().add(i));
        let s = _mm256_loadu_pd(src.as_ptr().add(i));
        _mm256_storeu_pd(dst.as_mut_ptr().add(i), _mm256_fmadd_pd(wv, s, d));
        i += 4;
    }
    while i < n {
        *dst.get_unchecked_mut(i) += w * *src.get_unchecked(i);
        i += 1;
    }
}

fn axpy_scalar(dst: &mut [f32], src: &[f32], w: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * *s;
    }
}

fn dot_scalar(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_avx2(dst: &mut [f32], src: &[f32], w: f32) {
    use core::arch::x86_64::*;
    let n = dst.len();
    let wv = _mm256_set1_ps(w);
    let mut i = 0;
    while i + 8 <= n {
        let d = _mm256_loadu_ps(dst.as_ptr().add(i));
        let s = _mm256_loadu_ps(src.as_ptr().add(i));
        _mm256_storeu_ps(dst.as_mut_ptr().add(i), _mm256_fmadd_ps(wv, s, d));
        i += 8;
    }
    while i < n {
        *dst.get_unchecked_mut(i) += w * *src.get_unchecked(i);
        i += 1;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f32 {
    use core::arch::x86_64::*;
    let n = a.len();
    let mut acc = _mm256_setzero_ps();
    let mut i = 0;
    while i + 8 <= n {
        let x = _mm256_loadu_ps(a.as_ptr().add(i));
        let y = _mm256_loadu_ps(b.as_ptr().add(i));
        acc = _mm256_fmadd_ps(x, y, acc);
        i += 8;
    }
    let hi = _mm256_extractf128_ps(acc, 1);
    let lo = _mm256_castps256_ps128(acc);
    let q = _mm_add_ps(hi, lo);
    let q = _mm_add_ps(q, _mm_movehl_ps(q, q));
    let q = _mm_add_ss(q, _mm_shuffle_ps(q, q, 1));
    let mut total = _mm_cvtss_f32(q);
    while i < n {
        total += *a.get_unchecked(i) * *b.get_unchecked(i);
        i += 1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axpy_matches_scalar_reference() {
        let src: alloc::vec::Vec<f32> = (0..67).map(|i| (i as f32) * 0.1 - 3.0).collect();
        let mut dst = alloc::vec![1.0f32; 67];
        let mut reference = dst.clone();
        axpy(&mut dst, &src, 0.37);
        axpy_scalar(&mut reference, &src, 0.37);
        for (a, b) in dst.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn dot_matches_scalar_reference() {
        let a: alloc::vec::Vec<f32> = (0..131).map(|i| ((i * 7 % 13) as f32) * 0.05).collect();
        let b: alloc::vec::Vec<f32> = (0..131).map(|i| ((i * 5 % 11) as f32) * 0.07 - 0.3).collect();
        let d = dot(&a, &b);
        let r = dot_scalar(&a, &b);
        assert!((d - r).abs() <= 1e-3 * r.abs().max(1.0), "{d} vs {r}");
    }
}
