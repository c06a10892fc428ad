use crate::error::{Error, Result};

/// A single-channel floating-point attribute plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatPlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        Ok(FloatPlane { width, height, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalLoss {
    pub value: f64,
    /// Subgradient with respect to the current planes; zero where the planes agree.
    pub grad: Vec<Vec<f64>>,
}

/// L1 distance between consecutive plane sets, normalized by plane area.
pub fn temporal_loss(current: &[FloatPlane], previous: &[FloatPlane]) -> Result<TemporalLoss> {
    if current.len() != previous.len() {
        return Err(Error::LengthMismatch(current.len(), previous.len()));
    }
    let Some(first) = current.first() else {
        return Ok(TemporalLoss { value: 0.0, grad: Vec::new() });
    };
    let (w, h) = (first.width, first.height);
    for (a, b) in current.iter().zip(previous) {
        if a.width != w || a.height != h || b.width != w || b.height != h {
            return Err(Error::PlaneShape(format!(
                "plane {}x{} vs {}x{} (expected {w}x{h})",
                a.width, a.height, b.width, b.height
            )));
        }
    }
    let area = (w * h) as f64;
    let mut value = 0.0;
    let grad = current
        .iter()
        .zip(previous)
        .map(|(a, b)| {
            a.data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| {
                    let d = x - y;
                    value += d.abs();
                    if d > 0.0 {
                        1.0 / area
                    } else if d < 0.0 {
                        -1.0 / area
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(TemporalLoss {
        value: value / area,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(v: Vec<f64>) -> FloatPlane {
        FloatPlane::new(2, 2, v).unwrap()
    }

    #[test]
    fn identical_and_constant_offset() {
        let a = vec![plane(vec![1.0, 2.0, 3.0, 4.0]), plane(vec![0.0; 4])];
        assert_eq!(temporal_loss(&a, &a).unwrap().value, 0.0);
        assert!(temporal_loss(&a, &a).unwrap().grad.iter().flatten().all(|g| *g == 0.0));
        let b = vec![plane(vec![1.25, 2.25, 3.25, 4.25]), plane(vec![0.0; 4])];
        assert!((temporal_loss(&b, &a).unwrap().value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_nonnegative() {
        let a = vec![plane(vec![1.0, -2.0, 3.0, 0.5])];
        let b = vec![plane(vec![0.0, 2.0, 3.5, -0.5])];
        let ab = temporal_loss(&a, &b).unwrap().value;
        assert_eq!(ab, temporal_loss(&b, &a).unwrap().value);
        assert!(ab > 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = vec![plane(vec![0.0; 4])];
        let b = vec![FloatPlane::new(4, 1, vec![0.0; 4]).unwrap()];
        assert!(temporal_loss(&a, &b).is_err());
        assert!(temporal_loss(&a, &[]).is_err());
        assert!(FloatPlane::new(3, 3, vec![0.0; 4]).is_err());
    }
}
