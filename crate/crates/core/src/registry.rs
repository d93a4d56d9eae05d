//! Built-in example models.

use nalgebra::DMatrix;

use crate::fiber::{FiberError, LieAlgebraModel, TwoForm};
use crate::scalar::Scalar;
use crate::torus::{Profile, TorusMetricSpec};

/// Complex structure on a Lie algebra example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComplexStructure {
    /// `J v_{2k} = v_{2k+1}`.
    Standard,
    /// `J v_a = v_b` for each pair `(a, b)`, with `omega(v_a, v_b) = 1`.
    Pairs(&'static [(usize, usize)]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LieExample {
    pub name: &'static str,
    pub description: &'static str,
    pub dim: usize,
    /// `[v_a, v_b] = value v_g` as `(g, a, b, value)`, for `a < b`.
    pub brackets: &'static [(usize, usize, usize, i64)],
    pub structure: ComplexStructure,
    pub integrable: bool,
}

impl LieExample {
    pub fn model<T: Scalar>(&self) -> Result<LieAlgebraModel<T>, FiberError> {
        let br: Vec<_> = self.brackets.iter().map(|&(g, a, b, v)| (g, a, b, T::lit(v as f64))).collect();
        let base = LieAlgebraModel::<T>::standard(self.dim, &br)?;
        match self.structure {
            ComplexStructure::Standard => Ok(base),
            ComplexStructure::Pairs(pairs) => {
                let d = self.dim;
                let mut j = DMatrix::from_element(d, d, T::zero());
                let mut w = DMatrix::from_element(d, d, T::zero());
                for &(a, b) in pairs {
                    j[(b, a)] = T::one();
                    j[(a, b)] = -T::one();
                    w[(a, b)] = T::one();
                    w[(b, a)] = -T::one();
                }
                let f = (0..d * d * d)
                    .map(|k| base.structure_constant(k / (d * d), (k / d) % d, k % d).clone())
                    .collect();
                LieAlgebraModel::new(d, f, j, TwoForm::from_matrix(w, 0.0)?)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusExample {
    pub name: &'static str,
    pub description: &'static str,
    pub n: usize,
    pub size: usize,
    pub metric: TorusMetricSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    Lie(LieExample),
    Torus(TorusExample),
}

impl Example {
    pub fn name(&self) -> &'static str {
        match self {
            Example::Lie(e) => e.name,
            Example::Torus(e) => e.name,
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Example::Lie(e) => e.description,
            Example::Torus(e) => e.description,
        }
    }
}

pub const ABELIAN: LieExample = LieExample {
    name: "abelian",
    description: "abelian R^4 with the standard J and omega",
    dim: 4,
    brackets: &[],
    structure: ComplexStructure::Standard,
    integrable: true,
};

pub const HEISENBERG_KT_INTEGRABLE: LieExample = LieExample {
    name: "heisenberg_kt_integrable",
    description: "Heisenberg + R, [v1,v2]=v3, Jv1=v2, Jv3=v4 (Kodaira-Thurston, integrable)",
    dim: 4,
    brackets: &[(2, 0, 1, 1)],
    structure: ComplexStructure::Standard,
    integrable: true,
};

pub const HEISENBERG_KT_NONINTEGRABLE: LieExample = LieExample {
    name: "heisenberg_kt_nonintegrable",
    description: "Heisenberg + R, [v1,v2]=v3, Jv1=v3, Jv2=v4 (N(v1,v2) = -v3)",
    dim: 4,
    brackets: &[(2, 0, 1, 1)],
    structure: ComplexStructure::Pairs(&[(0, 2), (1, 3)]),
    integrable: false,
};

pub const AFFINE_SOLVABLE: LieExample = LieExample {
    name: "affine_solvable",
    description: "aff(R) + R^2, [v1,v2]=v2, standard J (P0 eigenvalues -1,-1,0,0)",
    dim: 4,
    brackets: &[(1, 0, 1, 1)],
    structure: ComplexStructure::Standard,
    integrable: true,
};

pub const AFFINE_NONINTEGRABLE: LieExample = LieExample {
    name: "affine_nonintegrable",
    description: "aff(R) + R^2, [v1,v2]=v2, Jv1=v3, Jv2=v4",
    dim: 4,
    brackets: &[(1, 0, 1, 1)],
    structure: ComplexStructure::Pairs(&[(0, 2), (1, 3)]),
    integrable: false,
};

pub const EXPANDING: LieExample = LieExample {
    name: "expanding",
    description: "su(2) + R (Hopf surface), standard J; P0 eigenvalues 0,0,1,1 and T = 1/2",
    dim: 4,
    brackets: &[(2, 0, 1, 1), (0, 1, 2, 1), (1, 0, 2, -1)],
    structure: ComplexStructure::Standard,
    integrable: true,
};

pub const AFFINE_PAIR: LieExample = LieExample {
    name: "affine_pair",
    description: "aff(R) + aff(R) + R^2 in dimension 6, standard J",
    dim: 6,
    brackets: &[(1, 0, 1, 1), (3, 2, 3, 1)],
    structure: ComplexStructure::Standard,
    integrable: true,
};

pub const LIE_EXAMPLES: &[LieExample] = &[
    ABELIAN,
    HEISENBERG_KT_INTEGRABLE,
    HEISENBERG_KT_NONINTEGRABLE,
    AFFINE_SOLVABLE,
    AFFINE_NONINTEGRABLE,
    EXPANDING,
    AFFINE_PAIR,
];

pub fn torus_examples() -> Vec<TorusExample> {
    vec![
        TorusExample {
            name: "torus_flat",
            description: "flat torus, n = 1, N = 16",
            n: 1,
            size: 16,
            metric: TorusMetricSpec::Flat,
        },
        TorusExample {
            name: "torus_bump",
            description: "n = 1, N = 64, omega0 = (1 + sin(2 pi x) sin(2 pi y) / 2) flat",
            n: 1,
            size: 64,
            metric: TorusMetricSpec::Conformal { amplitude: 0.5, frequency: 1.0, profile: Profile::Bump },
        },
        TorusExample {
            name: "torus_wave",
            description: "n = 1, N = 32, omega0 = (1 + 0.001 sin(2 pi x)) flat (linear regime)",
            n: 1,
            size: 32,
            metric: TorusMetricSpec::Conformal { amplitude: 1e-3, frequency: 1.0, profile: Profile::Wave },
        },
        TorusExample {
            name: "torus_diagonal",
            description: "n = 2, N = 8, anisotropic diagonal metric",
            n: 2,
            size: 8,
            metric: TorusMetricSpec::Diagonal { scales: vec![1.0, 2.0], amplitude: 0.3, frequency: 1.0 },
        },
    ]
}

/// Every example, Lie algebras first.
pub fn all() -> Vec<Example> {
    LIE_EXAMPLES
        .iter()
        .copied()
        .map(Example::Lie)
        .chain(torus_examples().into_iter().map(Example::Torus))
        .collect()
}

pub fn find(name: &str) -> Option<Example> {
    all().into_iter().find(|e| e.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{nijenhuis_table, validate_model};
    use num_rational::Rational64;

    #[test]
    fn lie_examples_validate_exactly() {
        for ex in LIE_EXAMPLES {
            let m = ex.model::<Rational64>().unwrap();
            let report = validate_model(&m, 0.0);
            assert!(report.is_empty(), "{}: {report}", ex.name);
            let integrable = nijenhuis_table(&m).iter().all(|x| *x == Rational64::from_integer(0));
            assert_eq!(integrable, ex.integrable, "{}", ex.name);
        }
    }

    #[test]
    fn names_are_unique() {
        let names: Vec<_> = all().iter().map(Example::name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(find("torus_bump").is_some() && find("nope").is_none());
    }
}
