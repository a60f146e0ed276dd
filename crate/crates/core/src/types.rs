use std::fmt;

use nalgebra::{DVector, Vector3};

/// A position or displacement in task space, millimeters.
pub type Point3 = Vector3<f64>;

/// An observed POM displacement, millimeters.
pub type Motion = Vector3<f64>;

/// An actuation input, one component per actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct Control(DVector<f64>);

impl Control {
    pub fn new(components: Vec<f64>) -> Self {
        Control(DVector::from_vec(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Control(DVector::zeros(dim))
    }

    pub fn from_vector(v: DVector<f64>) -> Self {
        Control(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Componentwise `(a + b) / 2`.
    pub fn midpoint(a: &Control, b: &Control) -> Control {
        Control((&a.0 + &b.0) * 0.5)
    }
}

impl From<Vec<f64>> for Control {
    fn from(v: Vec<f64>) -> Self {
        Control::new(v)
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}
