use padic_msymb::classical::{cm_discriminant, eigensystems, refine, FormType, ManinBasis, RootChoice};
use padic_msymb::family::ramification_diagnostic;
use padic_msymb::ovsymb::{generalized_eigenspaces, theta_lift_critical};

#[test]
fn x0_32_critical_point_is_ramified_of_degree_two() {
    let b = ManinBasis::new(32, 5).unwrap();
    let (systems, _) = eigensystems(b, 0, 5).unwrap();
    let s = systems
        .iter()
        .find(|s| s.form_type == FormType::Cuspidal && s.eigendata().ok().and_then(|e| cm_discriminant(&e)) == Some(-4))
        .unwrap();
    let f = refine(&s.eigendata().unwrap(), RootChoice::Critical, 30).unwrap();
    let plus = theta_lift_critical(&f, 1, 12, 7).unwrap();
    let minus = theta_lift_critical(&f, -1, 12, 7).unwrap();
    let (flag, _) = generalized_eigenspaces(&plus, &minus, &f, 4).unwrap();
    assert_eq!(flag.e, 2);
    let r = ramification_diagnostic(&flag, &f, 2);
    assert_eq!(r.consistent, Some(true), "{r:?}");
    // det t and its discriminant both vanish to first order in u
    assert_eq!((r.det_order, r.disc_order), (Some(1), Some(1)));
}
