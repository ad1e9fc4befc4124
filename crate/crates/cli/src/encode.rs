//! JSON encodings that carry the guaranteed modulus p^t of every number.

use padic_msymb::lfun::{LSeries, SpecialValue};
use padic_msymb::{CharValue, PadicNum};
use serde_json::{json, Value};

pub const SCHEMA: &str = padic_msymb::ovsymb::SCHEMA;

/// {"value", "zero", "valuation", "precision"}; precision is null for an exact zero.
pub fn padic(x: &PadicNum) -> Value {
    let precision = (!x.is_exact_zero()).then(|| x.abs_prec());
    if x.is_zero() {
        return json!({ "value": x.to_string(), "zero": true, "valuation": precision, "precision": precision });
    }
    json!({
        "value": x.to_string(),
        "zero": false,
        "valuation": x.valuation(),
        "precision": precision,
    })
}

pub fn char_value(v: &CharValue) -> Value {
    match v {
        CharValue::Padic(x) => padic(x),
        CharValue::Cyclo(x) => json!({
            "field": format!("Q_{}(zeta_{}^{})", x.p, x.p, x.level),
            "pi_coefficients": x.coeffs.iter().map(padic).collect::<Vec<_>>(),
            "zero": x.is_zero(),
            "valuation": x.valuation().map(|r| r.to_string()),
            "precision": x.abs_prec(),
        }),
    }
}

pub fn special_value(sv: &SpecialValue) -> Value {
    json!({
        "tame": sv.tame,
        "wild": sv.wild.map(|(level, r)| json!({ "level": level, "r": r })),
        "j": sv.j,
        "coset_level": sv.level,
        "value": char_value(&sv.value),
        "zero": sv.is_zero(),
        "zero_mod_p_power": sv.is_zero().then(|| sv.valuation()),
        "precision": sv.precision,
    })
}

pub fn lseries(l: &LSeries) -> Value {
    json!({
        "tame": l.tame,
        "coset_level": l.level,
        "coefficients": l.coeffs.iter().map(padic).collect::<Vec<_>>(),
    })
}
