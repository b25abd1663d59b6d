use crate::domain::Instance;
use crate::error::{Error, Result};

/// Number of dihedral views of the unit square.
pub const NUM_AUGMENTATIONS: usize = 8;

fn transform(index: usize, [x, y]: [f64; 2]) -> [f64; 2] {
    match index {
        0 => [x, y],
        1 => [1.0 - x, y],
        2 => [x, 1.0 - y],
        3 => [1.0 - x, 1.0 - y],
        4 => [y, x],
        5 => [1.0 - y, x],
        6 => [y, 1.0 - x],
        _ => [1.0 - y, 1.0 - x],
    }
}

/// Apply dihedral transform `index` (0 is the identity) to the coordinates.
/// Payloads are left untouched.
pub fn augment(instance: &Instance, index: usize) -> Result<Instance> {
    if index >= NUM_AUGMENTATIONS {
        return Err(Error::Argument(format!("augmentation index {index} out of 0..8")));
    }
    let mut out = instance.clone();
    if index != 0 {
        for c in &mut out.coords {
            *c = transform(index, *c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate, objective, Task};

    #[test]
    fn identity_and_isometry() {
        let inst = generate(Task::Tsp, 9, 4).unwrap();
        assert_eq!(augment(&inst, 0).unwrap(), inst);
        assert!(augment(&inst, 8).is_err());
        let tour: Vec<usize> = (0..9).collect();
        let base = objective(&inst, &tour).unwrap();
        for k in 1..8 {
            let a = augment(&inst, k).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    assert!((a.dist(i, j) - inst.dist(i, j)).abs() < 1e-12);
                }
            }
            assert!((objective(&a, &tour).unwrap() - base).abs() < 1e-12);
        }
    }
}
