use proptest::prelude::*;

use resiot_core::crypto_suite::{
    dh_agree, dh_generate, ops, rng_from_seed, sym_decrypt, sym_encrypt, BilinearSuite, Ciphertext,
    Scalar,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pairing_is_bilinear(a in 1u64.., b in 1u64..) {
        let s = BilinearSuite;
        let (a, b) = (Scalar::from(a), Scalar::from(b));
        let lhs = s.pairing(&ops::g1_exp(&s.g1(), &a), &ops::g2_exp(&s.g2(), &b));
        let rhs = ops::gt_exp(&s.pairing(&s.g1(), &s.g2()), &(a * b));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn dh_agreement_is_symmetric(seed in any::<u64>()) {
        let mut rng = rng_from_seed(seed);
        let x = dh_generate(&mut rng);
        let y = dh_generate(&mut rng);
        let k1 = dh_agree(&x, y.public()).unwrap();
        let k2 = dh_agree(&y, x.public()).unwrap();
        prop_assert_eq!(k1.as_bytes(), k2.as_bytes());
        let z = dh_generate(&mut rng);
        let k3 = dh_agree(&x, z.public()).unwrap();
        prop_assert_ne!(k1.as_bytes(), k3.as_bytes());
    }

    #[test]
    fn symmetric_round_trip(seed in any::<u64>(), len in 0usize..=4096) {
        let mut rng = rng_from_seed(seed);
        let key = dh_agree(&dh_generate(&mut rng), dh_generate(&mut rng).public()).unwrap();
        let mut pt = vec![0u8; len];
        rand::RngCore::fill_bytes(&mut rng, &mut pt);
        let ct = sym_encrypt(&key, &pt, &mut rng);
        let wire = Ciphertext::from_bytes(&ct.to_bytes()).unwrap();
        prop_assert_eq!(sym_decrypt(&key, &wire).unwrap(), pt);
    }

    #[test]
    fn tampered_ciphertext_is_rejected(seed in any::<u64>(), len in 1usize..256, pos in any::<prop::sample::Index>()) {
        let mut rng = rng_from_seed(seed);
        let key = dh_agree(&dh_generate(&mut rng), dh_generate(&mut rng).public()).unwrap();
        let pt = vec![7u8; len];
        let mut bytes = sym_encrypt(&key, &pt, &mut rng).to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1;
        // Either the length prefix no longer parses or authentication fails.
        if let Ok(ct) = Ciphertext::from_bytes(&bytes) {
            prop_assert!(sym_decrypt(&key, &ct).is_err());
        }
    }
}

#[test]
fn dh_rejects_identity() {
    let mut rng = rng_from_seed(1);
    let x = dh_generate(&mut rng);
    let zero = ops::g1_exp(&BilinearSuite.g1(), &Scalar::from(0u64));
    assert!(dh_agree(&x, &zero).is_err());
}
