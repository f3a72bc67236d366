use std::path::{Path, PathBuf};

use super::{bin_hz, peak_bin, sort_by_peak, VizError};

/// Log-magnitude spectra of one layer's filters.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSheet {
    pub layer: usize,
    /// `spectra[filter][bin]`, in filter order.
    pub spectra: Vec<Vec<f64>>,
    /// Filter indices sorted by peak bin.
    pub order: Vec<usize>,
    /// Frequency of each bin.
    pub hz: Vec<f64>,
}

impl SpectrumSheet {
    /// `signal_len` is the length of the waveforms the spectra came from.
    pub fn new(
        layer: usize,
        sample_rate: u32,
        signal_len: usize,
        spectra: Vec<Vec<f64>>,
    ) -> Result<Self, VizError> {
        let bins = signal_len / 2 + 1;
        if spectra.is_empty() {
            return Err(VizError::Invalid(
                "a sheet needs at least one filter".into(),
            ));
        }
        if let Some(bad) = spectra.iter().position(|r| r.len() != bins) {
            return Err(VizError::Invalid(format!(
                "filter {bad} has {} bins, expected {bins}",
                spectra[bad].len()
            )));
        }
        let order = sort_by_peak(&spectra);
        let hz = (0..bins)
            .map(|k| bin_hz(k, signal_len, sample_rate))
            .collect();
        Ok(SpectrumSheet {
            layer,
            spectra,
            order,
            hz,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.hz.len()
    }

    /// Peak bin of every filter in sorted order.
    pub fn sorted_peaks(&self) -> Vec<usize> {
        self.order
            .iter()
            .map(|&f| peak_bin(&self.spectra[f]))
            .collect()
    }

    /// One row per bin: Hz, then the filters in sorted order.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["hz".to_string()];
        header.extend(self.order.iter().map(|f| format!("filter_{f}")));
        w.write_record(&header).expect("writing to memory");
        for (k, hz) in self.hz.iter().enumerate() {
            let mut row = vec![format!("{hz:.6}")];
            row.extend(
                self.order
                    .iter()
                    .map(|&f| format!("{:.6}", self.spectra[f][k])),
            );
            w.write_record(&row).expect("writing to memory");
        }
        w.into_inner().expect("writing to memory")
    }

    /// Gray levels, row-major with the highest frequency in the first row
    /// and filters in sorted order across. Min-max normalized over the
    /// whole sheet; a constant sheet maps to 128.
    pub fn gray_levels(&self) -> Vec<Vec<u8>> {
        let all = self.spectra.iter().flatten();
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        (0..self.n_bins())
            .rev()
            .map(|k| {
                self.order
                    .iter()
                    .map(|&f| {
                        if hi > lo {
                            (255.0 * (self.spectra[f][k] - lo) / (hi - lo)).round() as u8
                        } else {
                            128
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Binary graymap (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.order.len(), self.n_bins()).into_bytes();
        out.extend(self.gray_levels().into_iter().flatten());
        out
    }
}

/// Writes `layerN.csv` and `layerN.pgm` into `dir`, creating it if needed.
pub fn emit_sheet(sheet: &SpectrumSheet, dir: &Path) -> Result<(PathBuf, PathBuf), VizError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| VizError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = dir.join(format!("layer{}.csv", sheet.layer));
    let pgm = dir.join(format!("layer{}.pgm", sheet.layer));
    std::fs::write(&csv, sheet.to_csv()).map_err(io(&csv))?;
    std::fs::write(&pgm, sheet.to_pgm()).map_err(io(&pgm))?;
    Ok((csv, pgm))
}
