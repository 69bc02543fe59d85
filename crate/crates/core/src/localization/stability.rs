use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::stats::BaselineStats;
use crate::error::{Error, Result};
use crate::organism::NeuronId;

/// Per-channel stability over K prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub k: usize,
    pub epsilon: f64,
    pub mean_z: Array2<f64>,
    pub std_z: Array2<f64>,
    pub score: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCell {
    pub cell: NeuronId,
    pub score: f64,
}

/// Standardizes K × L × M activations against baseline statistics.
pub fn normalize(activations: ArrayView3<f64>, stats: &BaselineStats) -> Result<Array3<f64>> {
    let (_, l, m) = activations.dim();
    if (l, m) != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "activations are {l}×{m} per prompt, baseline statistics {:?}",
            stats.dim()
        )));
    }
    let denom = stats.std.mapv(|s| s + stats.epsilon);
    let mut z = activations.to_owned();
    for mut sample in z.axis_iter_mut(Axis(0)) {
        Zip::from(&mut sample)
            .and(&stats.mean)
            .and(&denom)
            .for_each(|x, &mu, &d| *x = (*x - mu) / d);
    }
    Ok(z)
}

/// `S = mean_i(z)^2 / (std_i(z) + ε)` with population std over prompts.
pub fn stability_scores(z: ArrayView3<f64>, epsilon: f64) -> Result<StabilityTable> {
    let k = z.len_of(Axis(0));
    if k == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("z-scores".into()));
    }
    let mean_z = z.mean_axis(Axis(0)).expect("k >= 1");
    let std_z = z.std_axis(Axis(0), 0.0);
    let score = Zip::from(&mean_z)
        .and(&std_z)
        .map_collect(|&mu, &sd| mu * mu / (sd + epsilon));
    if score.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stability scores".into()));
    }
    Ok(StabilityTable {
        k,
        epsilon,
        mean_z,
        std_z,
        score,
    })
}

impl StabilityTable {
    /// Every channel, best first; exact ties go to the lower layer, then the
    /// lower neuron index.
    pub fn ranking(&self) -> Vec<RankedCell> {
        let mut cells: Vec<RankedCell> = self
            .score
            .indexed_iter()
            .map(|((layer, neuron), &score)| RankedCell {
                cell: NeuronId::new(layer, neuron),
                score,
            })
            .collect();
        cells.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cell.cmp(&b.cell)));
        cells
    }

    /// CSV with columns layer, neuron, mean_z, std_z, score, rank (1-based),
    /// one row per channel in (layer, neuron) order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut rank = Array2::<usize>::zeros(self.score.dim());
        for (i, c) in self.ranking().iter().enumerate() {
            rank[[c.cell.layer, c.cell.neuron]] = i + 1;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["layer", "neuron", "mean_z", "std_z", "score", "rank"])
            .map_err(csv_err)?;
        for ((l, j), score) in self.score.indexed_iter() {
            w.write_record([
                l.to_string(),
                j.to_string(),
                self.mean_z[[l, j]].to_string(),
                self.std_z[[l, j]].to_string(),
                score.to_string(),
                rank[[l, j]].to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(())
    }
}

/// Ranked cells per entity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMap {
    pub entries: BTreeMap<String, Vec<RankedCell>>,
}

impl CellMap {
    pub fn insert(&mut self, entity_id: impl Into<String>, ranking: Vec<RankedCell>) {
        self.entries.insert(entity_id.into(), ranking);
    }

    pub fn top(&self, entity_id: &str) -> Option<RankedCell> {
        self.entries.get(entity_id).and_then(|r| r.first().copied())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Number of entities whose top cell sits in each layer.
pub fn layer_histogram(map: &CellMap) -> Result<BTreeMap<usize, usize>> {
    if map.is_empty() {
        return Err(Error::EmptyInput("cell map"));
    }
    let mut counts = BTreeMap::new();
    for ranking in map.entries.values() {
        let top = ranking
            .first()
            .ok_or_else(|| Error::InvalidArgument("entity with an empty ranking".into()))?;
        *counts.entry(top.cell.layer).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn table(values: &[f64]) -> StabilityTable {
        let z = Array3::from_shape_vec((values.len(), 1, 1), values.to_vec()).unwrap();
        stability_scores(z.view(), 1e-6).unwrap()
    }

    #[test]
    fn spec_cases() {
        let t = table(&[2.0, 2.0]);
        assert_eq!(t.mean_z[[0, 0]], 2.0);
        assert_eq!(t.std_z[[0, 0]], 0.0);
        assert!((t.score[[0, 0]] - 4e6).abs() < 1e-6);
        assert!((table(&[1.0, 3.0]).score[[0, 0]] - 4.0 / (1.0 + 1e-6)).abs() < 1e-12);
        assert_eq!(table(&[0.0, 0.0]).score[[0, 0]], 0.0);
        assert!((table(&[3.0]).score[[0, 0]] - 9.0 / 1e-6).abs() < 1e-3);
    }

    #[test]
    fn ranking_breaks_ties_by_layer_then_neuron() {
        let z = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 2.0, -2.0]).unwrap();
        let t = stability_scores(z.view(), 1e-6).unwrap();
        let order: Vec<NeuronId> = t.ranking().iter().map(|c| c.cell).collect();
        assert_eq!(
            order,
            vec![NeuronId::new(0, 1), NeuronId::new(1, 0), NeuronId::new(1, 1), NeuronId::new(0, 0)]
        );
    }

    #[test]
    fn histogram_counts_top_layers() {
        let mut map = CellMap::default();
        for (e, l) in [("a", 0), ("b", 0), ("c", 2)] {
            map.insert(e, vec![RankedCell { cell: NeuronId::new(l, 3), score: 1.0 }]);
        }
        let h = layer_histogram(&map).unwrap();
        assert_eq!(h, BTreeMap::from([(0, 2), (2, 1)]));
        assert!(layer_histogram(&CellMap::default()).is_err());
    }

    #[test]
    fn csv_has_one_row_per_channel() {
        let z = Array3::from_shape_vec((2, 2, 3), (0..12).map(f64::from).collect()).unwrap();
        let t = stability_scores(z.view(), 1e-6).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("layer,neuron,mean_z,std_z,score,rank\n"));
    }
}
