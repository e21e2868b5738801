use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Covariance function built from four primitives combined by `+` and `*`.
/// The `sigma` of every primitive is a variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Kernel {
    Rbf {
        sigma: f64,
        lengthscale: f64,
    },
    Periodic {
        sigma: f64,
        lengthscale: f64,
        period: f64,
    },
    Linear {
        sigma: f64,
    },
    Matern32 {
        sigma: f64,
        lengthscale: f64,
    },
    Sum(Box<Kernel>, Box<Kernel>),
    Product(Box<Kernel>, Box<Kernel>),
}

impl Kernel {
    pub fn rbf(sigma: f64, lengthscale: f64) -> Self {
        Kernel::Rbf { sigma, lengthscale }
    }

    pub fn periodic(sigma: f64, lengthscale: f64, period: f64) -> Self {
        Kernel::Periodic {
            sigma,
            lengthscale,
            period,
        }
    }

    pub fn linear(sigma: f64) -> Self {
        Kernel::Linear { sigma }
    }

    pub fn matern32(sigma: f64, lengthscale: f64) -> Self {
        Kernel::Matern32 { sigma, lengthscale }
    }

    pub fn add(self, other: Kernel) -> Self {
        Kernel::Sum(Box::new(self), Box::new(other))
    }

    pub fn mul(self, other: Kernel) -> Self {
        Kernel::Product(Box::new(self), Box::new(other))
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::KernelParse(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        match self {
            Kernel::Rbf { sigma, lengthscale } | Kernel::Matern32 { sigma, lengthscale } => {
                pos("variance", *sigma)?;
                pos("lengthscale", *lengthscale)
            }
            Kernel::Periodic {
                sigma,
                lengthscale,
                period,
            } => {
                pos("variance", *sigma)?;
                pos("lengthscale", *lengthscale)?;
                pos("period", *period)
            }
            Kernel::Linear { sigma } => pos("variance", *sigma),
            Kernel::Sum(a, b) | Kernel::Product(a, b) => {
                a.validate()?;
                b.validate()
            }
        }
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        let r = (t - u).abs();
        match self {
            Kernel::Rbf { sigma, lengthscale } => {
                sigma * (-r * r / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::Periodic {
                sigma,
                lengthscale,
                period,
            } => {
                let s = (std::f64::consts::PI * r / period).sin();
                sigma * (-2.0 * s * s / (lengthscale * lengthscale)).exp()
            }
            Kernel::Linear { sigma } => sigma * t * u,
            Kernel::Matern32 { sigma, lengthscale } => {
                let a = 3f64.sqrt() * r / lengthscale;
                sigma * (1.0 + a) * (-a).exp()
            }
            Kernel::Sum(a, b) => a.eval(t, u) + b.eval(t, u),
            Kernel::Product(a, b) => a.eval(t, u) * b.eval(t, u),
        }
    }

    /// `T×T` Gram matrix over `times`.
    pub fn gram(&self, times: &[f64]) -> Tensor {
        self.cross(times, times)
    }

    /// Cross-covariance matrix `K(a_i, b_k)`.
    pub fn cross(&self, a: &[f64], b: &[f64]) -> Tensor {
        let mut out = Tensor::zeros(&[a.len(), b.len()]);
        let d = out.data_mut();
        for (i, &ti) in a.iter().enumerate() {
            for (k, &tk) in b.iter().enumerate() {
                d[i * b.len() + k] = self.eval(ti, tk);
            }
        }
        out
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Rbf { sigma, lengthscale } => write!(f, "rbf({sigma},{lengthscale})"),
            Kernel::Periodic {
                sigma,
                lengthscale,
                period,
            } => write!(f, "periodic({sigma},{lengthscale},{period})"),
            Kernel::Linear { sigma } => write!(f, "linear({sigma})"),
            Kernel::Matern32 { sigma, lengthscale } => write!(f, "matern32({sigma},{lengthscale})"),
            Kernel::Sum(a, b) => write!(f, "{a}+{b}"),
            Kernel::Product(a, b) => {
                let wrap = |k: &Kernel| match k {
                    Kernel::Sum(..) => format!("({k})"),
                    _ => k.to_string(),
                };
                write!(f, "{}*{}", wrap(a), wrap(b))
            }
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let toks: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut p = Parser {
            toks: &toks,
            pos: 0,
        };
        let k = p.expr()?;
        if p.pos != toks.len() {
            return Err(Error::KernelParse(format!("trailing input in {s:?}")));
        }
        k.validate()?;
        Ok(k)
    }
}

impl From<Kernel> for String {
    fn from(k: Kernel) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for Kernel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

struct Parser<'a> {
    toks: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.toks.get(self.pos).copied()
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::KernelParse(format!(
                "expected '{c}' at offset {}",
                self.pos
            )))
        }
    }

    fn expr(&mut self) -> Result<Kernel> {
        let mut k = self.term()?;
        while self.peek() == Some('+') {
            self.pos += 1;
            k = k.add(self.term()?);
        }
        Ok(k)
    }

    fn term(&mut self) -> Result<Kernel> {
        let mut k = self.factor()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            k = k.mul(self.factor()?);
        }
        Ok(k)
    }

    fn factor(&mut self) -> Result<Kernel> {
        if self.peek() == Some('(') {
            self.pos += 1;
            let k = self.expr()?;
            self.expect(')')?;
            return Ok(k);
        }
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.pos += 1;
        }
        let name: String = self.toks[start..self.pos]
            .iter()
            .collect::<String>()
            .to_ascii_lowercase();
        self.expect('(')?;
        let start = self.pos;
        while self.peek().is_some_and(|c| c != ')') {
            self.pos += 1;
        }
        let body: String = self.toks[start..self.pos].iter().collect();
        self.expect(')')?;
        let args = body
            .split(',')
            .map(|a| {
                a.parse::<f64>()
                    .map_err(|_| Error::KernelParse(format!("bad number {a:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::KernelParse(format!(
                    "{name} takes {n} arguments, got {}",
                    args.len()
                )))
            }
        };
        match name.as_str() {
            "rbf" => arity(2).map(|_| Kernel::rbf(args[0], args[1])),
            "periodic" => arity(3).map(|_| Kernel::periodic(args[0], args[1], args[2])),
            "linear" => arity(1).map(|_| Kernel::linear(args[0])),
            "matern32" => arity(2).map(|_| Kernel::matern32(args[0], args[1])),
            _ => Err(Error::KernelParse(format!("unknown kernel {name:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rbf_values() {
        let k = Kernel::rbf(0.1, 2.0);
        assert_eq!(k.eval(3.0, 3.0), 0.1);
        assert_relative_eq!(k.eval(1.0, 3.0), 0.1 * (-0.5f64).exp(), epsilon = 1e-16);
    }

    #[test]
    fn sum_gram_is_sum_of_grams() {
        let t: Vec<f64> = (0..6).map(|i| i as f64 * 0.7).collect();
        let a = Kernel::periodic(1.0, 2.0, 2.0);
        let b = Kernel::matern32(0.5, 1.5);
        let s = a.clone().add(b.clone()).gram(&t);
        let (ga, gb) = (a.gram(&t), b.gram(&t));
        for i in 0..s.len() {
            assert_relative_eq!(s.data()[i], ga.data()[i] + gb.data()[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        let k: Kernel = "periodic(1,2,2)+linear(1)*matern32(1,2)".parse().unwrap();
        assert!(matches!(&k, Kernel::Sum(_, b) if matches!(**b, Kernel::Product(..))));
        assert_eq!(k.to_string(), "periodic(1,2,2)+linear(1)*matern32(1,2)");
        let nested: Kernel = "(rbf(0.1,2)+linear(1))*rbf(1, 0.5)".parse().unwrap();
        assert_eq!(nested.to_string().parse::<Kernel>().unwrap(), nested);
        let inf: Kernel = "rbf(0.1,inf)".parse().unwrap();
        assert_eq!(inf.eval(0.0, 5.0), 0.1);
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "rbf(1)",
            "rbf(1,-2)",
            "cosine(1)",
            "rbf(1,2)+",
            "rbf(1,x)",
            "rbf(1,2))",
        ] {
            assert!(bad.parse::<Kernel>().is_err(), "{bad}");
        }
    }
}
