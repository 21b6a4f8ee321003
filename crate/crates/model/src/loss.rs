//! Segmentation objectives and evaluation metrics.
//!
//! The segmentation loss is CE + beta * Lovasz-softmax; the Lovasz term is
//! the Lovasz extension of the Jaccard index, evaluated per scene over the
//! classes present in the ground truth. Metrics are counting-based IoU over
//! binary occupancy and mean per-class IoU over semantic classes.

use skimba_tensor::{Scalar, Tensor};

use crate::error::{ModelError, Result};
use crate::voxel::VoxelGrid;

/// Cross-entropy of (C, V) logits against V labels: softmax over the class
/// axis, mean negative log-likelihood over voxels.
pub fn cross_entropy<E: Scalar>(logits: &Tensor<E>, labels: &[u8]) -> Result<Tensor<E>> {
    if logits.rank() != 2 || logits.shape()[1] != labels.len() {
        return Err(ModelError::Geometry(format!(
            "cross_entropy expects (C, V) logits for {} labels, got {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let classes = logits.shape()[0];
    let voxels = labels.len();
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
        return Err(ModelError::LabelOutOfRange { label: bad as usize, classes });
    }
    let log_probs = logits.log_softmax(0)?;
    // pick (label_v, v) for each voxel from the flattened (C*V) view
    let flat = log_probs.reshape(&[classes * voxels])?;
    let picks: Vec<usize> = labels.iter().enumerate().map(|(v, &l)| l as usize * voxels + v).collect();
    flat.index_select(0, &picks)?.mean_all()?.neg().map_err(Into::into)
}

/// Lovasz extension gradient of the Jaccard loss for a descending-sorted
/// foreground indicator vector.
fn lovasz_grad<E: Scalar>(fg_sorted: &[E]) -> Vec<E> {
    let p = fg_sorted.len();
    let gts: E = fg_sorted.iter().copied().sum();
    let mut jaccard = vec![E::ZERO; p];
    let mut cum_fg = E::ZERO;
    let mut cum_bg = E::ZERO;
    for i in 0..p {
        cum_fg += fg_sorted[i];
        cum_bg += E::ONE - fg_sorted[i];
        let intersection = gts - cum_fg;
        let union = gts + cum_bg;
        jaccard[i] = E::ONE - intersection / union;
    }
    for i in (1..p).rev() {
        jaccard[i] = jaccard[i] - jaccard[i - 1];
    }
    jaccard
}

/// Lovasz-softmax loss of (C, V) class probabilities against V labels,
/// averaged over the classes present in the ground truth. Zero when no labels
/// are given.
pub fn lovasz_softmax<E: Scalar>(probs: &Tensor<E>, labels: &[u8]) -> Result<Tensor<E>> {
    if probs.rank() != 2 || probs.shape()[1] != labels.len() {
        return Err(ModelError::Geometry(format!(
            "lovasz_softmax expects (C, V) probs for {} labels, got {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    if labels.is_empty() {
        return Ok(Tensor::scalar(E::ZERO));
    }
    let classes = probs.shape()[0];
    let voxels = labels.len();
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
        return Err(ModelError::LabelOutOfRange { label: bad as usize, classes });
    }
    let mut present: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    present.sort_unstable();
    present.dedup();

    let mut total: Option<Tensor<E>> = None;
    for &c in &present {
        let fg: Vec<E> =
            labels.iter().map(|&l| if l as usize == c { E::ONE } else { E::ZERO }).collect();
        let fg_t = Tensor::from_vec(&[voxels], fg.clone())?;
        let p_c = probs.narrow(0, c, 1)?.reshape(&[voxels])?;
        // |fg - p| for fg in {0,1}: fg + p - 2 fg p
        let errors = fg_t.add(&p_c)?.sub(&fg_t.mul(&p_c)?.mul_scalar(E::from_f64(2.0))?)?;
        // descending stable sort of the error values; the permutation is a
        // constant of the (piecewise-linear) extension
        let mut order: Vec<usize> = (0..voxels).collect();
        let evals = errors.data().to_vec();
        order.sort_by(|&a, &b| evals[b].partial_cmp(&evals[a]).unwrap().then(a.cmp(&b)));
        let errors_sorted = errors.index_select(0, &order)?;
        let fg_sorted: Vec<E> = order.iter().map(|&i| fg[i]).collect();
        let coeffs = Tensor::from_vec(&[voxels], lovasz_grad(&fg_sorted))?;
        let loss_c = errors_sorted.mul(&coeffs)?.sum_all()?;
        total = Some(match total {
            Some(t) => t.add(&loss_c)?,
            None => loss_c,
        });
    }
    total
        .unwrap()
        .mul_scalar(E::ONE / E::from_usize(present.len()))
        .map_err(Into::into)
}

/// Combined segmentation objective: CE + beta * Lovasz-softmax.
pub fn combined_seg_loss<E: Scalar>(logits: &Tensor<E>, labels: &[u8], beta: E) -> Result<Tensor<E>> {
    let ce = cross_entropy(logits, labels)?;
    if beta == E::ZERO {
        return Ok(ce);
    }
    let lovasz = lovasz_softmax(&logits.softmax(0)?, labels)?;
    ce.add(&lovasz.mul_scalar(beta)?).map_err(Into::into)
}

/// Per-class true/false positive/negative counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionCounts {
    pub classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Binary-occupancy counts for completion IoU.
    pub occ_tp: u64,
    pub occ_fp: u64,
    pub occ_fn: u64,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts {
            classes,
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
            occ_tp: 0,
            occ_fp: 0,
            occ_fn: 0,
        }
    }

    pub fn update(&mut self, pred: &VoxelGrid, truth: &VoxelGrid) -> Result<()> {
        if pred.dims != truth.dims {
            return Err(ModelError::Geometry(format!(
                "grid dims differ: {:?} vs {:?}",
                pred.dims, truth.dims
            )));
        }
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(ModelError::LabelOutOfRange { label: p.max(t), classes: self.classes });
            }
            if p == t {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[t] += 1;
            }
            match (p != 0, t != 0) {
                (true, true) => self.occ_tp += 1,
                (true, false) => self.occ_fp += 1,
                (false, true) => self.occ_fn += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.classes, other.classes);
        for c in 0..self.classes {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.occ_tp += other.occ_tp;
        self.occ_fp += other.occ_fp;
        self.occ_fn += other.occ_fn;
    }

    /// Binary-occupancy IoU; 1.0 when both grids are entirely empty.
    pub fn completion_iou(&self) -> f64 {
        let union = self.occ_tp + self.occ_fp + self.occ_fn;
        if union == 0 {
            1.0
        } else {
            self.occ_tp as f64 / union as f64
        }
    }

    /// IoU of one semantic class, None when absent from the ground truth.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        if self.tp[c] + self.fn_[c] == 0 {
            return None;
        }
        let union = self.tp[c] + self.fp[c] + self.fn_[c];
        Some(self.tp[c] as f64 / union as f64)
    }

    /// Mean IoU over semantic classes 1..C-1 present in the ground truth.
    pub fn semantic_miou(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 1..self.classes {
            if let Some(iou) = self.class_iou(c) {
                sum += iou;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Binary-occupancy IoU between two grids.
pub fn completion_iou(pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    let classes = pred.class_count.max(truth.class_count);
    let mut counts = ConfusionCounts::new(classes);
    counts.update(pred, truth)?;
    Ok(counts.completion_iou())
}

/// Mean per-class IoU over semantic classes present in the ground truth.
pub fn semantic_miou(pred: &VoxelGrid, truth: &VoxelGrid) -> Result<f64> {
    let classes = pred.class_count.max(truth.class_count);
    let mut counts = ConfusionCounts::new(classes);
    counts.update(pred, truth)?;
    Ok(counts.semantic_miou())
}
