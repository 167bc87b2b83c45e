//! Unit-circle angle codec.
//!
//! An orientation `theta` with angular frequency `omega` is carried as the
//! point `(cos(omega*theta), sin(omega*theta))`. Decoding recovers
//! `theta in [0, 2*pi/omega)` through a six-case piecewise argument function.
//! Because the code lives on a closed curve, the distance between two codes
//! is continuous across the period boundary, unlike the raw angle gap.

use crate::error::{contract_err, Error, Result};
use crate::scalar::Scalar;

/// Below this magnitude a coordinate is treated as exactly zero when
/// selecting the on-axis cases of [`arg_unit`].
pub const AXIS_TOLERANCE: f64 = 1e-12;

/// Raw vectors shorter than this cannot be projected onto the circle.
pub const MIN_NORM: f64 = 1e-12;

/// `arg_unit` accepts points within this distance (in squared norm) of the unit circle.
pub const UNIT_TOLERANCE: f64 = 1e-6;

pub const MAX_OMEGA: f64 = 2.0;

pub const DEFAULT_OMEGA: f64 = 1.0;

/// Angular frequency, validated to lie in `(0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Omega<T>(T);

impl<T: Scalar> Omega<T> {
    pub fn new(omega: T) -> Result<Self> {
        if !(omega > T::zero() && omega <= T::lit(MAX_OMEGA)) {
            return Err(contract_err!("omega must lie in (0, 2], got {omega}"));
        }
        Ok(Self(omega))
    }

    pub fn get(self) -> T {
        self.0
    }

    /// Length of the decodable angle range, `2*pi/omega`.
    pub fn period(self) -> T {
        T::TAU() / self.0
    }
}

impl<T: Scalar> Default for Omega<T> {
    fn default() -> Self {
        Self(T::lit(DEFAULT_OMEGA))
    }
}

/// An orientation encoded on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleCode<T> {
    x: T,
    y: T,
    omega: Omega<T>,
}

impl<T: Scalar> AngleCode<T> {
    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn omega(&self) -> Omega<T> {
        self.omega
    }
}

/// `theta -> (cos(omega*theta), sin(omega*theta))`.
///
/// `theta` must already be reduced into `[0, 2*pi/omega)`.
pub fn encode<T: Scalar>(theta: T, omega: Omega<T>) -> Result<AngleCode<T>> {
    if !(theta >= T::zero() && theta < omega.period()) {
        return Err(contract_err!(
            "theta {theta} outside [0, {}) for omega {}",
            omega.period(),
            omega.get()
        ));
    }
    let (y, x) = (omega.get() * theta).sin_cos();
    Ok(AngleCode { x, y, omega })
}

/// Derivative of [`encode`] with respect to theta.
pub fn encode_jacobian<T: Scalar>(theta: T, omega: Omega<T>) -> (T, T) {
    let w = omega.get();
    let (s, c) = (w * theta).sin_cos();
    (-w * s, w * c)
}

/// Projects a raw 2-vector onto the unit circle.
pub fn normalize<T: Scalar>(x: T, y: T, omega: Omega<T>) -> Result<AngleCode<T>> {
    let norm = x.hypot(y);
    if !(norm > T::lit(MIN_NORM)) {
        return Err(Error::Degenerate(format!(
            "vector ({x}, {y}) is too short to carry an angle"
        )));
    }
    Ok(AngleCode {
        x: x / norm,
        y: y / norm,
        omega,
    })
}

/// Argument of a unit-circle point, in `[0, 2*pi)`.
///
/// Case split on the signs of `x` and `y`:
///
/// | condition        | value               |
/// |------------------|---------------------|
/// | x > 0, y >= 0    | atan(y/x)           |
/// | x > 0, y < 0     | atan(y/x) + 2*pi    |
/// | x < 0            | atan(y/x) + pi      |
/// | x = 0, y > 0     | pi/2                |
/// | x = 0, y < 0     | 3*pi/2              |
/// | x = 0, y = 0     | undefined (error)   |
pub fn arg_unit<T: Scalar>(x: T, y: T) -> Result<T> {
    let tol = T::lit(AXIS_TOLERANCE);
    let on_axis = x.abs() <= tol;
    if on_axis && y.abs() <= tol {
        return Err(Error::Degenerate("argument of the origin is undefined".into()));
    }
    let r2 = x * x + y * y;
    if (r2 - T::one()).abs() > T::lit(UNIT_TOLERANCE) {
        return Err(contract_err!("({x}, {y}) is not on the unit circle"));
    }
    let pi = T::PI();
    let angle = if on_axis {
        if y > T::zero() {
            pi / T::lit(2.0)
        } else {
            T::lit(3.0) * pi / T::lit(2.0)
        }
    } else if x > T::zero() {
        if y >= T::zero() {
            (y / x).atan()
        } else {
            (y / x).atan() + T::TAU()
        }
    } else {
        (y / x).atan() + pi
    };
    // atan(-tiny) + 2*pi can round up onto 2*pi itself
    Ok(if angle >= T::TAU() {
        T::TAU() - T::TAU() * T::epsilon()
    } else {
        angle
    })
}

/// Recovers `theta = arg_unit(x, y) / omega`.
pub fn decode<T: Scalar>(code: &AngleCode<T>) -> Result<T> {
    Ok(arg_unit(code.x, code.y)? / code.omega.get())
}

/// Euclidean distance between two codes in the code plane. For exact codes
/// this is the chord `2*|sin(omega*(a - b)/2)|`.
pub fn code_distance<T: Scalar>(a: &AngleCode<T>, b: &AngleCode<T>) -> Result<T> {
    if a.omega != b.omega {
        return Err(contract_err!(
            "codes use different omegas: {} vs {}",
            a.omega.get(),
            b.omega.get()
        ));
    }
    Ok((a.x - b.x).hypot(a.y - b.y))
}

/// Shortest distance between two angles on a circle of circumference `period`.
pub fn circular_gap<T: Scalar>(a: T, b: T, period: T) -> T {
    let d = (a - b).abs() % period;
    d.min(period - d)
}
