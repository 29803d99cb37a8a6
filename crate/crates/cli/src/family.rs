use clap::{Args, ValueEnum};
use hvopt::approx::{make_asymmetric_steklov, make_steklov_cdf, make_truncation_family, ApproxFamily, DeltaFn, SteklovKind};
use hvopt::{FunctionHandle, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyTag {
    TruncatedHinge,
    ModifiedHinge,
    /// Truncation of a nondecreasing `psi` with shift `q` and scale `m`.
    Truncation,
    Steklov,
    AsymmetricSteklov,
    /// Two modified hinges, one per sign, approximating `|t|_0`.
    L0Sum,
}

#[derive(Clone, Debug, Args)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value = "modified-hinge")]
    pub family: FamilyTag,
    /// `psi` in `x1` for `truncation`.
    #[arg(long, default_value = "x1")]
    pub psi: String,
    /// Shift `q(delta)` for `truncation`.
    #[arg(long, default_value = "sqrt(delta) / (1 + sqrt(delta))")]
    pub q: String,
    /// Scale `m(delta)` for `truncation`.
    #[arg(long, default_value = "delta + sqrt(delta)")]
    pub m: String,
    /// Lower support end for `asymmetric-steklov`.
    #[arg(long, default_value = "delta^2")]
    pub lower: String,
    /// Upper support end for `asymmetric-steklov`.
    #[arg(long, default_value = "delta")]
    pub upper: String,
}

pub fn build(args: &FamilyArgs) -> Result<ApproxFamily> {
    Ok(match args.family {
        FamilyTag::TruncatedHinge => ApproxFamily::truncated_hinge(),
        FamilyTag::ModifiedHinge => ApproxFamily::modified_hinge(),
        FamilyTag::Truncation => make_truncation_family(
            FunctionHandle::parse(&args.psi, 1)?,
            DeltaFn::parse(&args.q)?,
            DeltaFn::parse(&args.m)?,
        )?,
        FamilyTag::Steklov => make_steklov_cdf(SteklovKind::Symmetric)?,
        FamilyTag::AsymmetricSteklov => make_asymmetric_steklov(DeltaFn::parse(&args.lower)?, DeltaFn::parse(&args.upper)?)?,
        FamilyTag::L0Sum => {
            let h = ApproxFamily::modified_hinge();
            ApproxFamily::l0_sum(&h, &h)?
        }
    })
}
