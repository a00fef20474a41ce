//! Ready-made utilities and markets used by the CLI defaults and tests.

use crate::error::Result;
use crate::market::MarketModel;
use crate::utility::{PowerSegment, RawSegment, RawUtility, SaharaPiece};

pub use crate::policy::incentive::IncentiveParams;

/// Discontinuous, partly convex-looking demo specification with five
/// segments: SAHARA, power, SAHARA, flat, SAHARA.
pub fn discontinuous_demo() -> RawUtility {
    let (l1, l2, l3, l4) = (-6.0, -4.5, -1.0, 2.0);
    let first = SaharaPiece::new(1.7, 1.0, 3.0, 2.0, 0.0);
    let power = PowerSegment {
        scale: -20.0,
        anchor: l2,
        exponent: -0.7,
        shift: 0.0,
    };
    let mut middle = SaharaPiece::new(2.2, 1.0, 1.0, 1.5, 0.0);
    // start the middle arc at the level the power segment leaves off at l1
    middle.u = power.value(l1) - middle.value(l2);
    let flat = middle.value(l3);
    let mut last = SaharaPiece::new(1.2, 1.0, 6.0, 7.0, 0.0);
    last.u = flat - last.value(l4);
    RawUtility {
        breakpoints: vec![l1, l2, l3, l4],
        segments: vec![
            RawSegment::Sahara(first),
            RawSegment::Power(power),
            RawSegment::Sahara(middle),
            RawSegment::Constant { value: flat },
            RawSegment::Sahara(last),
        ],
    }
}

/// One asset with `mu = 0.086`, `sigma = 0.1`, `r = 0.03`.
pub fn scalar_market(horizon: f64) -> Result<MarketModel> {
    MarketModel::scalar(horizon, 0.03, 0.086, 0.1)
}
