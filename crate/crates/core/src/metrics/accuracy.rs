use crate::error::{Error, Result};

fn check_len(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c {
        return Err(Error::DimensionMismatch(format!("lengths {a}, {b}, {c} differ")));
    }
    Ok(())
}

/// Binary IoU = TP / (TP + FP + FN) over voxels where `mask` is set.
pub fn iou_binary(pred_occupied: &[bool], gt_occupied: &[bool], mask: &[bool]) -> Result<f64> {
    check_len(pred_occupied.len(), gt_occupied.len(), mask.len())?;
    let (mut tp, mut fp, mut fneg, mut seen) = (0u64, 0u64, 0u64, 0u64);
    for ((&p, &g), &m) in pred_occupied.iter().zip(gt_occupied).zip(mask) {
        if !m {
            continue;
        }
        seen += 1;
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if seen == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let denom = tp + fp + fneg;
    if denom == 0 {
        return Err(Error::IouUndefined);
    }
    Ok(tp as f64 / denom as f64)
}

/// Per-class IoU for classes `1..=num_classes` and their mean.
///
/// Entry `c - 1` of the returned vector is `None` when class `c` appears in
/// neither prediction nor ground truth; such classes do not enter the mean.
pub fn miou_semantic(
    pred_labels: &[u16],
    gt_labels: &[u16],
    num_classes: usize,
    mask: &[bool],
) -> Result<(Vec<Option<f64>>, f64)> {
    check_len(pred_labels.len(), gt_labels.len(), mask.len())?;
    let width = num_classes + 1;
    let mut tp = vec![0u64; width];
    let mut fp = vec![0u64; width];
    let mut fneg = vec![0u64; width];
    let mut seen = 0u64;
    for ((&p, &g), &m) in pred_labels.iter().zip(gt_labels).zip(mask) {
        if !m {
            continue;
        }
        let (p, g) = (p as usize, g as usize);
        if p >= width || g >= width {
            return Err(Error::InvalidArgument(format!("label out of range for {width} classes")));
        }
        seen += 1;
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
    }
    if seen == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    let per_class: Vec<Option<f64>> = (1..width)
        .map(|c| {
            let denom = tp[c] + fp[c] + fneg[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoClassPresent);
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok((per_class, miou))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        let all = [true; 3];
        assert_eq!(iou_binary(&[true, true, false], &[true, false, false], &all).unwrap(), 0.5);
        let gt = [true, false, true];
        assert_eq!(iou_binary(&gt, &gt, &all).unwrap(), 1.0);
        assert_eq!(iou_binary(&[false, true, false], &gt, &all).unwrap(), 0.0);
        assert!(matches!(
            iou_binary(&gt, &gt, &[false; 3]),
            Err(Error::EmptyEvaluationSet)
        ));
        assert!(matches!(
            iou_binary(&[false; 3], &[false; 3], &all),
            Err(Error::IouUndefined)
        ));
    }

    #[test]
    fn miou_examples() {
        let all = [true; 4];
        let (pc, m) = miou_semantic(&[1, 2, 1, 2], &[1, 2, 1, 2], 2, &all).unwrap();
        assert_eq!(m, 1.0);
        assert_eq!(pc, vec![Some(1.0), Some(1.0)]);

        let (pc, m) = miou_semantic(&[1, 1, 2, 2], &[1, 2, 1, 2], 2, &all).unwrap();
        assert_eq!(pc, vec![Some(1.0 / 3.0), Some(1.0 / 3.0)]);
        assert_eq!(m, 1.0 / 3.0);

        let (pc, m) = miou_semantic(&[1, 2, 1, 2], &[1, 2, 1, 2], 3, &all).unwrap();
        assert_eq!(pc[2], None);
        assert_eq!(m, 1.0);

        assert!(matches!(
            miou_semantic(&[0, 0], &[0, 0], 2, &[true, true]),
            Err(Error::NoClassPresent)
        ));
    }

    proptest! {
        #[test]
        fn miou_matches_binary_iou_for_one_class(
            rows in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..200)
        ) {
            let pred: Vec<bool> = rows.iter().map(|r| r.0).collect();
            let gt: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
            let pl: Vec<u16> = pred.iter().map(|&b| b as u16).collect();
            let gl: Vec<u16> = gt.iter().map(|&b| b as u16).collect();
            match (iou_binary(&pred, &gt, &mask), miou_semantic(&pl, &gl, 1, &mask)) {
                (Ok(a), Ok((_, b))) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "disagree: {:?} vs {:?}", a, b),
            }
        }
    }
}
