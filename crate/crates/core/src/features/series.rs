//! Single-series features. Every function takes one channel of a window.

use crate::scalar::{half, two};
use crate::Scalar;

use super::FeatureError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FftCoefficient<T> {
    pub re: T,
    pub im: T,
    pub abs: T,
}

/// Direct DFT term `C_k = Σ_m a_m · exp(−2πi·mk/n)`.
///
/// The phase `mk` is reduced modulo `n` before scaling so large `m·k`
/// products do not lose precision.
pub fn fft_coefficient<T: Scalar>(series: &[T], k: usize) -> Result<FftCoefficient<T>, FeatureError> {
    let n = series.len();
    if k >= n {
        return Err(FeatureError::Param(format!("fft coefficient k={k} out of range for n={n}")));
    }
    let step = two::<T>() * T::PI() / T::from_usize_exact(n);
    let mut re = T::zero();
    let mut im = T::zero();
    for (m, &a) in series.iter().enumerate() {
        let phase = ((m as u128 * k as u128) % n as u128) as usize;
        let angle = step * T::from_usize_exact(phase);
        re += a * angle.cos();
        im -= a * angle.sin();
    }
    Ok(FftCoefficient { re, im, abs: re.hypot(im) })
}

/// Sum of squares.
pub fn abs_energy<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    Ok(series.iter().map(|&t| t * t).sum())
}

/// `Σ |t_{i+1} − t_i|`.
pub fn absolute_changes<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    if series.len() < 2 {
        return Err(FeatureError::EmptyInput);
    }
    Ok(series.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRatios<T> {
    pub ratios: Vec<T>,
    /// Set when the series has zero energy and the uniform vector was returned.
    pub degenerate: bool,
}

/// Per-chunk share of the total energy over `num_chunks` contiguous chunks;
/// the first `n mod N` chunks carry one extra element.
pub fn energy_ratio_by_chunks<T: Scalar>(series: &[T], num_chunks: usize) -> Result<ChunkRatios<T>, FeatureError> {
    if num_chunks == 0 {
        return Err(FeatureError::Param("num_chunks must be >= 1".into()));
    }
    let total = abs_energy(series)?;
    if total <= T::zero() {
        let u = T::one() / T::from_usize_exact(num_chunks);
        return Ok(ChunkRatios {
            ratios: vec![u; num_chunks],
            degenerate: true,
        });
    }
    let n = series.len();
    let (base, extra) = (n / num_chunks, n % num_chunks);
    let mut start = 0;
    let ratios = (0..num_chunks)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let chunk = &series[start..start + len];
            start += len;
            chunk.iter().map(|&t| t * t).sum::<T>() / total
        })
        .collect();
    Ok(ChunkRatios {
        ratios,
        degenerate: false,
    })
}

/// First argmax divided by the series length, in `[0, 1)`.
pub fn first_location_of_maximum<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    let idx = crate::signal::first_argmax(series).ok_or(FeatureError::EmptyInput)?;
    Ok(T::from_usize_exact(idx) / T::from_usize_exact(series.len()))
}

pub fn mean<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    Ok(series.iter().copied().sum::<T>() / T::from_usize_exact(series.len()))
}

/// Population standard deviation.
pub fn std_dev<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    let mu = mean(series)?;
    let var = series.iter().map(|&t| (t - mu) * (t - mu)).sum::<T>() / T::from_usize_exact(series.len());
    Ok(var.sqrt())
}

pub fn min<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    series.iter().copied().reduce(T::min).ok_or(FeatureError::EmptyInput)
}

pub fn max<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    series.iter().copied().reduce(T::max).ok_or(FeatureError::EmptyInput)
}

pub fn median<T: Scalar>(series: &[T]) -> Result<T, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let mut v = series.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * half()
    })
}
