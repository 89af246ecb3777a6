mod common;

use coeffcrypt::cipher::{encrypt_coeffs, gen_val_key, img_dec, img_enc, PosKey, PosSeeds, ValKey, ValSeeds};
use coeffcrypt::keys::{
    cs_reencrypt_for_group, derive_inc_usr_key, derive_inc_val_key, gen_user_key, img_key_enc, kmc_transform,
    unwrap_for_group, user_key_dec, user_key_enc, user_key_enc_for, user_recover_pos_key, wrap_for_group,
    UserKey, UserSeeds, WrapKey,
};
use coeffcrypt::perm::Permutation;
use coeffcrypt::{Component, Error};
use common::{desk, load, pixels};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn user_key(seed: u64) -> UserKey {
    gen_user_key(&UserSeeds::generate(&mut rng(seed))).unwrap()
}

fn val_key(seed: u64) -> ValKey {
    gen_val_key(&ValSeeds::generate(&mut rng(seed)), 5, 5).unwrap()
}

fn pos_key_for(path_index: usize, seed: u64) -> (coeffcrypt::codec::CoeffImage, PosKey) {
    let img = load(&desk()[path_index]);
    let (_, pos) = encrypt_coeffs(&img, "iid", &val_key(seed), &PosSeeds::generate(&mut rng(seed + 1))).unwrap();
    (img, pos)
}

#[test]
fn user_key_shape() {
    let seeds = UserSeeds::generate(&mut rng(1));
    let a = gen_user_key(&seeds).unwrap();
    assert_eq!(a, gen_user_key(&seeds).unwrap());
    for c in Component::ALL {
        assert!(a.pair_perm(c, 1).unwrap().is_identity());
        for s in 1..=63 {
            let p = a.pair_perm(c, s).unwrap();
            assert_eq!(p.len(), s);
            Permutation::new(p.as_slice().to_vec()).unwrap();
        }
        for l in 1..=16 {
            assert_eq!(a.mask(c, l).unwrap().len(), l);
        }
        assert!(a.pair_perm(c, 64).is_err());
        assert!(a.mask(c, 17).is_err());
        assert_eq!(a.block_perm(c, 77).unwrap(), a.block_perm(c, 77).unwrap());
    }
}

#[test]
fn self_difference_is_identity() {
    let mut a = user_key(2);
    a.materialize_counts([10, 3, 3]).unwrap();
    let d = user_key_dec(&a, &a).unwrap();
    assert!(d.is_derived());
    for c in Component::ALL {
        assert!(d.block_perm(c, if c == Component::Y { 10 } else { 3 }).unwrap().is_identity());
        for s in 1..=63 {
            assert!(d.pair_perm(c, s).unwrap().is_identity());
        }
        for l in 1..=16 {
            assert_eq!(d.mask(c, l).unwrap().count_ones(), 0);
        }
    }
    // XOR layers agree between the two directions.
    let b = user_key(3);
    let (e, f) = (user_key_enc(&a, &b).unwrap(), user_key_dec(&a, &b).unwrap());
    for c in Component::ALL {
        for l in 1..=16 {
            assert_eq!(e.mask(c, l).unwrap(), f.mask(c, l).unwrap());
        }
    }
}

#[test]
fn identity_user_key_leaves_position_key_alone() {
    let (img, pos) = pos_key_for(0, 4);
    let mut a = user_key(5);
    a.materialize_counts(img.block_counts()).unwrap();
    let id = user_key_dec(&a, &a).unwrap();
    let enc = img_key_enc(&pos, "iid", &id).unwrap();
    assert_eq!(enc.key, pos);
    assert_eq!(kmc_transform(&enc, &id).unwrap().key, pos);
    assert_eq!(user_recover_pos_key(&enc, &id).unwrap(), pos);
}

#[test]
fn encryption_preserves_key_shape() {
    let (_, pos) = pos_key_for(1, 6);
    let enc = img_key_enc(&pos, "iid", &user_key(7)).unwrap();
    for c in 0..3 {
        assert_eq!(enc.key.pmtb[c].len(), pos.pmtb[c].len());
        for j in 0..pos.pmtp[c].len() {
            assert_eq!(enc.key.pmtp[c][j].len(), pos.pmtp[c][j].len());
            assert_eq!(enc.key.bitkey[c][j].len(), pos.bitkey[c][j].len());
        }
    }
    assert_ne!(enc.key, pos);
    assert_ne!(img_key_enc(&enc.key, "iid", &user_key(7)).unwrap().key, pos);
}

#[test]
fn derived_keys_only_cover_materialized_sizes() {
    let (img, pos) = pos_key_for(2, 8);
    let u_o = user_key(9);
    let u_u = user_key(10);
    let link = user_key_enc(&u_o, &u_u).unwrap();
    let enc = img_key_enc(&pos, "iid", &u_o).unwrap();
    assert!(matches!(kmc_transform(&enc, &link), Err(Error::Contract(_))));

    let mut link = link;
    link.merge_block_perms(&user_key_enc_for(&u_o, &u_u, img.block_counts()).unwrap()).unwrap();
    let out = kmc_transform(&enc, &link).unwrap();
    assert_eq!(user_recover_pos_key(&out, &u_u).unwrap(), pos);
}

#[test]
fn owner_to_user_chain_recovers_the_key() {
    let mut r = rng(11);
    for trial in 0..10 {
        let img = load(&desk()[trial % 20]);
        let vk = gen_val_key(&ValSeeds::generate(&mut r), 5, 5).unwrap();
        let (enc_img, pos) = img_enc(&img, "iid", "o", &vk, &mut r).unwrap();
        let mut u_o = gen_user_key(&UserSeeds::generate(&mut r)).unwrap();
        let u_u = gen_user_key(&UserSeeds::generate(&mut r)).unwrap();
        u_o.materialize_counts(img.block_counts()).unwrap();
        let stored = img_key_enc(&pos, "iid", &u_o).unwrap();
        let link = user_key_enc(&u_o, &u_u).unwrap();
        let sent = kmc_transform(&stored, &link).unwrap();
        let got = user_recover_pos_key(&sent, &u_u).unwrap();
        assert_eq!(got, pos);
        assert!(img_dec(&enc_img, &got, &vk).unwrap().same_coefficients(&img));
    }
}

#[test]
fn group_chain_recovers_the_key_and_image() {
    let mut r = rng(12);
    for trial in 0..6 {
        let img = load(&desk()[(3 * trial + 1) % 20]);
        let v_o = gen_val_key(&ValSeeds::generate(&mut r), 5, 5).unwrap();
        let v_g = gen_val_key(&ValSeeds::generate(&mut r), 5, 5).unwrap();
        let (enc_img, pos) = img_enc(&img, "iid", "o", &v_o, &mut r).unwrap();
        let mut u_o = gen_user_key(&UserSeeds::generate(&mut r)).unwrap();
        let mut u_g = gen_user_key(&UserSeeds::generate(&mut r)).unwrap();
        let u_u = gen_user_key(&UserSeeds::generate(&mut r)).unwrap();
        u_o.materialize_counts(img.block_counts()).unwrap();
        u_g.materialize_counts(img.block_counts()).unwrap();

        let stored = img_key_enc(&pos, "iid", &u_o).unwrap();
        let inc = derive_inc_usr_key(&u_o, &u_g).unwrap();
        let link = user_key_enc(&u_g, &u_u).unwrap();
        let sent = kmc_transform(&kmc_transform(&stored, &inc).unwrap(), &link).unwrap();
        let got = user_recover_pos_key(&sent, &u_u).unwrap();
        assert_eq!(got, pos);

        let group_img = cs_reencrypt_for_group(&enc_img, &derive_inc_val_key(&v_o, &v_g).unwrap(), "g").unwrap();
        assert_eq!(group_img.value_scope, "g");
        pixels(&group_img.jpeg);
        assert!(img_dec(&group_img, &got, &v_g).unwrap().same_coefficients(&img));
        assert!(img_dec(&group_img, &got, &v_o).map_or(true, |x| !x.same_coefficients(&img)));
    }
}

#[test]
fn group_reencryption_matches_direct_encryption() {
    let v_o = val_key(13);
    let v_g = val_key(14);
    let inc = derive_inc_val_key(&v_o, &v_g).unwrap();
    for path in desk().iter().take(6) {
        let img = load(path);
        let seeds = PosSeeds::generate(&mut rng(15));
        let (under_owner, _) = encrypt_coeffs(&img, "iid", &v_o, &seeds).unwrap();
        let (under_group, _) = encrypt_coeffs(&img, "iid", &v_g, &seeds).unwrap();
        let enc = coeffcrypt::cipher::EncryptedImage {
            iid: "iid".into(),
            owner: "o".into(),
            value_scope: "o".into(),
            n_pmt1: 5,
            n_pmt2: 5,
            jpeg: coeffcrypt::codec::encode_jpeg(&under_owner).unwrap(),
            dc_carry: None,
        };
        let moved = cs_reencrypt_for_group(&enc, &inc, "g").unwrap().coefficients().unwrap();
        for c in 0..3 {
            for (a, b) in moved.components[c].blocks.iter().zip(&under_group.components[c].blocks) {
                assert_eq!(a.pairs, b.pairs);
                assert_eq!(a.dc.group, b.dc.group);
            }
        }
    }
}

#[test]
fn increment_keys_between_equal_keys_are_identities() {
    let v = val_key(16);
    let inc = derive_inc_val_key(&v, &v).unwrap();
    assert!(inc.pmtv.iter().flatten().chain(inc.pmt_dcl.iter().flatten()).all(Permutation::is_identity));
    let mut r = rng(17);
    let img = load(&desk()[7]);
    let (enc, _) = img_enc(&img, "iid", "o", &v, &mut r).unwrap();
    let same = cs_reencrypt_for_group(&enc, &inc, "g").unwrap();
    assert!(same.coefficients().unwrap().same_coefficients(&enc.coefficients().unwrap()));
    assert!(same.dc_carry.is_none());

    let other = gen_val_key(&ValSeeds::generate(&mut r), 4, 5).unwrap();
    assert!(matches!(derive_inc_val_key(&v, &other), Err(Error::Contract(_))));

    let u = user_key(18);
    let d = derive_inc_usr_key(&u, &u).unwrap();
    assert!(d.pair_perm(Component::U, 40).unwrap().is_identity());
}

#[test]
fn wrong_or_tampered_keys_are_detected() {
    let (img, pos) = pos_key_for(3, 19);
    let mut u_o = user_key(20);
    u_o.materialize_counts(img.block_counts()).unwrap();
    let u_u = user_key(21);
    let sent = kmc_transform(&img_key_enc(&pos, "iid", &u_o).unwrap(), &user_key_enc(&u_o, &u_u).unwrap()).unwrap();
    assert!(matches!(user_recover_pos_key(&sent, &user_key(22)), Err(Error::Tamper(_))));

    let mut tampered = sent.clone();
    let j = tampered.key.bitkey[0].iter().position(|b| !b.is_empty()).unwrap();
    tampered.key.bitkey[0][j] = tampered.key.bitkey[0][j].xor(&coeffcrypt::BitString::from_u64(1, tampered.key.bitkey[0][j].len())).unwrap();
    assert!(matches!(user_recover_pos_key(&tampered, &u_u), Err(Error::Tamper(_))));

    let mut renamed = sent.clone();
    renamed.iid = "other".into();
    assert!(matches!(user_recover_pos_key(&renamed, &u_u), Err(Error::Tamper(_))));
}

#[test]
fn envelope() {
    let (img, pos) = pos_key_for(4, 23);
    let mut u = user_key(24);
    u.materialize_counts(img.block_counts()).unwrap();
    let enc = img_key_enc(&pos, "iid", &u).unwrap();
    let mut r = rng(25);
    let k = WrapKey::generate(&mut r);
    let blob = wrap_for_group(&enc, &k, &mut r).unwrap();
    assert_eq!(unwrap_for_group(&blob, &k).unwrap(), enc);
    for i in [0, 12, blob.len() / 2, blob.len() - 1] {
        let mut bad = blob.clone();
        bad[i] ^= 0x01;
        assert!(matches!(unwrap_for_group(&bad, &k), Err(Error::Tamper(_))));
    }
    for _ in 0..20 {
        assert!(matches!(unwrap_for_group(&blob, &WrapKey::generate(&mut r)), Err(Error::Tamper(_))));
    }
    assert!(matches!(unwrap_for_group(&blob[..10], &k), Err(Error::Tamper(_))));
}

#[test]
fn no_single_store_determines_the_position_key() {
    // The KMC sees dec(pos, U_o) and enc(U_o, U_u). For any other U_o',
    // some pos' and U_u' reproduce both observables, so they cannot pin pos
    // down.
    let all: Vec<Permutation> = permutations(4);
    let pos = Permutation::new(vec![2, 4, 1, 3]).unwrap();
    let u_o = Permutation::new(vec![3, 1, 4, 2]).unwrap();
    let u_u = Permutation::new(vec![4, 3, 2, 1]).unwrap();
    let stored = pos.dec(&u_o).unwrap();
    let link = u_o.enc(&u_u).unwrap();
    let mut witnesses = Vec::new();
    for alt_o in &all {
        for alt_pos in &all {
            if alt_pos.dec(alt_o).unwrap() != stored {
                continue;
            }
            if all.iter().any(|alt_u| alt_o.enc(alt_u).unwrap() == link) {
                witnesses.push((alt_o.clone(), alt_pos.clone()));
            }
        }
    }
    let distinct_pos: std::collections::BTreeSet<_> = witnesses.iter().map(|w| w.1.as_slice().to_vec()).collect();
    assert!(witnesses.len() >= 2);
    assert_eq!(distinct_pos.len(), 24, "every position key is consistent with the KMC's view");
}

fn permutations(n: usize) -> Vec<Permutation> {
    fn go(prefix: &mut Vec<u32>, n: usize, out: &mut Vec<Permutation>) {
        if prefix.len() == n {
            out.push(Permutation::new(prefix.clone()).unwrap());
            return;
        }
        for k in 1..=n as u32 {
            if !prefix.contains(&k) {
                prefix.push(k);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}
