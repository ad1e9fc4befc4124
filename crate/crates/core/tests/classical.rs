use num_bigint::BigInt;
use num_rational::BigRational;
use padic_msymb::classical::{
    eigensystems, refine, Cusp, FormType, HeckeOp, ManinBasis, PathKind, RootChoice, SymbolSpace,
};
use padic_msymb::PadicNum;
use rand::{Rng, SeedableRng};

fn random_symbol(space: &SymbolSpace, rng: &mut impl Rng) -> padic_msymb::classical::RationalSymbol {
    let coeffs: Vec<BigRational> =
        (0..space.dim()).map(|_| BigRational::from_integer(BigInt::from(rng.gen_range(-5..6)))).collect();
    padic_msymb::classical::ClassicalSymbol::from_coords(space.basis.clone(), space.k, &space.combine(&coeffs))
}

#[test]
fn level_11_weight_0_systems() {
    let b = ManinBasis::new(11, 3).unwrap();
    let (systems, leftover) = eigensystems(b, 0, 3).unwrap();
    assert_eq!(leftover, 0);
    let cusp: Vec<_> = systems.iter().filter(|s| s.al[&2] == -2).collect();
    assert_eq!(cusp.len(), 1);
    let s = cusp[0];
    assert_eq!(s.form_type, FormType::Cuspidal);
    assert_eq!(s.dims(), (2, 2));
    // U_3 on the 3-old space: x^2 + x + 3
    let cp = s.up_charpoly().unwrap();
    let q = |n: i64| BigRational::from_integer(n.into());
    assert_eq!(cp, vec![q(3), q(1), q(1)]);
    let e = s.eigendata().unwrap();
    assert_eq!((e.ap, e.eps_p), (-1, 1));
}

#[test]
fn level_one_eisenstein_eigenvalues() {
    let b = ManinBasis::new(1, 3).unwrap();
    let (systems, _) = eigensystems(b, 2, 3).unwrap();
    let eis: Vec<_> = systems.iter().filter(|s| s.form_type == FormType::Eisenstein).collect();
    assert_eq!(eis.len(), 1);
    for (l, a) in &eis[0].al {
        assert_eq!(*a, 1 + (*l as i64).pow(3));
    }
    let e = eis[0].eigendata().unwrap();
    assert_eq!(e.ap, 28);
    let f = refine(&e, RootChoice::Critical, 10).unwrap();
    assert!(f.beta.agrees_with(&PadicNum::from_i128(3, 27, 20)));
}

#[test]
fn cuspidal_sign_parts_have_equal_dimension() {
    let b = ManinBasis::new(11, 5).unwrap();
    let (systems, _) = eigensystems(b, 0, 2).unwrap();
    for s in systems.iter().filter(|s| s.form_type == FormType::Cuspidal) {
        assert_eq!(s.plus.dim(), s.minus.dim());
    }
}

#[test]
fn hecke_operators_commute_and_preserve_relations() {
    let b = ManinBasis::new(11, 5).unwrap();
    let space = SymbolSpace::full(b, 0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let phi = random_symbol(&space, &mut rng);
        assert!(phi.constraints_hold());
        let a = phi.hecke(HeckeOp::T(2)).unwrap().hecke(HeckeOp::T(3)).unwrap();
        let c = phi.hecke(HeckeOp::T(3)).unwrap().hecke(HeckeOp::T(2)).unwrap();
        assert_eq!(a.coords(), c.coords());
        assert!(a.constraints_hold());
        let i2 = phi.hecke(HeckeOp::Iota).unwrap().hecke(HeckeOp::Iota).unwrap();
        assert_eq!(i2.coords(), phi.coords());
        let ui = phi.hecke(HeckeOp::Up).unwrap().hecke(HeckeOp::Iota).unwrap();
        let iu = phi.hecke(HeckeOp::Iota).unwrap().hecke(HeckeOp::Up).unwrap();
        assert_eq!(ui.coords(), iu.coords());
    }
}

#[test]
fn evaluation_is_path_independent() {
    let b = ManinBasis::new(1, 5).unwrap();
    let space = SymbolSpace::full(b, 2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let phi = random_symbol(&space, &mut rng);
    for _ in 0..20 {
        let r = Cusp::new(rng.gen_range(-200..200), rng.gen_range(1..200));
        let s = Cusp::new(rng.gen_range(-200..200), rng.gen_range(1..200));
        assert_eq!(
            phi.evaluate(r, s, PathKind::Floor),
            phi.evaluate(r, s, PathKind::Nearest)
        );
    }
}

#[test]
fn t_l_rejects_bad_primes() {
    let b = ManinBasis::new(11, 3).unwrap();
    let phi = padic_msymb::classical::RationalSymbol::zero(b, 0);
    assert!(phi.hecke(HeckeOp::T(11)).is_err());
    assert!(phi.hecke(HeckeOp::T(3)).is_err());
}
