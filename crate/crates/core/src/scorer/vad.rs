//! Energy-threshold voice activity detection, used only for the cascade
//! baseline.

use ndarray::ArrayView2;

/// Mean squared feature magnitude of each frame.
pub fn frame_energies(frames: ArrayView2<'_, f64>) -> Vec<f64> {
    let dim = frames.ncols().max(1) as f64;
    frames
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() / dim)
        .collect()
}

/// Speech segments as half-open `(start, end)` input-frame ranges.
///
/// Frames with energy at or above `energy_threshold` are speech; gaps shorter
/// than `min_silence` between speech runs are bridged; each segment is then
/// padded by `margin` frames on both sides and clipped to the stream. Padded
/// segments that touch are merged.
pub fn energy_vad_segment(
    frames: ArrayView2<'_, f64>,
    energy_threshold: f64,
    min_silence: usize,
    margin: usize,
) -> Vec<(usize, usize)> {
    let energies = frame_energies(frames);
    segment_energies(&energies, energy_threshold, min_silence.max(1), margin)
}

fn segment_energies(energies: &[f64], threshold: f64, min_silence: usize, margin: usize) -> Vec<(usize, usize)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &e) in energies.iter().enumerate() {
        match (e >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, energies.len()));
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.0 - last.1 < min_silence => last.1 = run.1,
            _ => merged.push(run),
        }
    }

    let n = energies.len();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(merged.len());
    for (s, e) in merged {
        let seg = (s.saturating_sub(margin), (e + margin).min(n));
        match out.last_mut() {
            Some(last) if seg.0 <= last.1 => last.1 = last.1.max(seg.1),
            _ => out.push(seg),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn stream(pattern: &[(f64, usize)]) -> Array2<f64> {
        let rows: Vec<f64> = pattern.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n)).collect();
        Array2::from_shape_vec((rows.len(), 1), rows).unwrap()
    }

    #[test]
    fn silence_gives_no_segments() {
        let x = Array2::zeros((300, 4));
        assert!(energy_vad_segment(x.view(), 0.01, 10, 5).is_empty());
    }

    #[test]
    fn gap_kept_or_merged() {
        let x = stream(&[(1.0, 50), (0.0, 100), (1.0, 50)]);
        assert_eq!(energy_vad_segment(x.view(), 0.5, 60, 0), vec![(0, 50), (150, 200)]);
        assert_eq!(energy_vad_segment(x.view(), 0.5, 120, 0), vec![(0, 200)]);
    }

    #[test]
    fn margin_is_clipped() {
        let x = stream(&[(0.0, 5), (1.0, 10), (0.0, 5)]);
        assert_eq!(energy_vad_segment(x.view(), 0.5, 1, 8), vec![(0, 20)]);
    }
}
