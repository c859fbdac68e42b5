mod common;

use common::schemes::{equivalence, random_credential, revocation_matrix, Setup};
use rand::rngs::StdRng;
use rand::SeedableRng;

#[test]
fn three_schemes_return_identical_bytes() {
    let setup = Setup::new();
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..25 {
        let (ctype, payload) = random_credential(&mut rng);
        equivalence(&setup, ctype, &payload).unwrap();
    }
}

#[test]
fn revoking_one_grant_disables_one_scheme() {
    let m = revocation_matrix(&Setup::new()).unwrap();
    for (r, row) in m.iter().enumerate() {
        for (c, &ok) in row.iter().enumerate() {
            assert_eq!(ok, r != c, "revoked {r}, fetched {c}");
        }
    }
}
