use super::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CA_HOST: &str = "ca.it2.ddu.ac.in";

fn issue_time() -> Timestamp {
    Timestamp::ymd_hms(2013, 2, 1, 9, 0, 0)
}

fn proxy_time() -> Timestamp {
    Timestamp::ymd_hms(2013, 2, 13, 13, 11, 48)
}

struct Fixture {
    ca: CertificateAuthority,
    cert: Certificate,
    key: PrivateKey,
    rng: ChaCha8Rng,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ca = CertificateAuthority::create(&ca_name_for_host(CA_HOST), issue_time(), &mut rng).unwrap();
    let dn = user_dn(&ca.name, "GT User");
    let (cert, key) = ca
        .issue_cert(&dn, Span::from_hours(24 * 365), "globus", issue_time(), &mut rng)
        .unwrap();
    Fixture { ca, cert, key, rng }
}

#[test]
fn dn_layout_matches_simple_ca_convention() {
    let f = fixture();
    assert_eq!(
        f.ca.root.subject,
        "/O=Grid/OU=GlobusTest/OU=simpleCA-ca.it2.ddu.ac.in/CN=Globus Simple CA"
    );
    assert!(f.ca.root.is_self_signed());
    assert_eq!(
        f.cert.subject,
        "/O=Grid/OU=GlobusTest/OU=simpleCA-ca.it2.ddu.ac.in/OU=Local/CN=GT User"
    );
}

#[test]
fn root_verifies_against_itself() {
    let f = fixture();
    let root = f.ca.root.clone();
    assert_eq!(verify_chain(std::slice::from_ref(&root), std::slice::from_ref(&root), issue_time(), Span::ZERO), Ok(()));
}

#[test]
fn ca_directory_initializes_once() {
    let dir = tempfile::tempdir().unwrap();
    let store = CaStore::new(dir.path().join("simpleCA"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ca = store.init("simpleCA-ca.it2.ddu.ac.in", issue_time(), &mut rng).unwrap();
    assert_eq!(
        store.init("simpleCA-ca.it2.ddu.ac.in", issue_time(), &mut rng).unwrap_err(),
        GsiError::AlreadyInitialized
    );
    let loaded = store.load().unwrap();
    assert_eq!(loaded.root, ca.root);
    assert_eq!(loaded.name, "simpleCA-ca.it2.ddu.ac.in");
    assert_eq!(
        CaStore::new(dir.path().join("none")).load().unwrap_err(),
        GsiError::NotInitialized
    );
}

#[test]
fn issued_cert_verifies_under_its_ca_only() {
    let mut f = fixture();
    let anchors = [f.ca.root.clone()];
    assert_eq!(
        verify_chain(&[f.cert.clone()], &anchors, proxy_time(), Span::ZERO),
        Ok(())
    );
    let other = CertificateAuthority::create("simpleCA-grid-v.it2.ddu.ac.in", issue_time(), &mut f.rng).unwrap();
    assert!(matches!(
        verify_chain(&[f.cert.clone()], &[other.root], proxy_time(), Span::ZERO),
        Err(VerifyError::UnknownIssuer { .. })
    ));
    // Same name, different key.
    let twin = CertificateAuthority::create(&f.ca.name, issue_time(), &mut f.rng).unwrap();
    assert!(matches!(
        verify_chain(&[f.cert.clone()], &[twin.root], proxy_time(), Span::ZERO),
        Err(VerifyError::BadSignature { .. })
    ));
}

#[test]
fn tampered_or_expired_anchor_is_not_trusted() {
    let f = fixture();
    let chain = [f.cert.clone()];
    let mut extended = f.ca.root.clone();
    extended.not_after = extended.not_after + Span::from_secs(1);
    assert!(matches!(
        verify_chain(&chain, &[extended], proxy_time(), Span::ZERO),
        Err(VerifyError::BadSignature { .. })
    ));
    let late = f.ca.root.not_after + Span::from_secs(1);
    assert!(matches!(
        verify_chain(&chain, std::slice::from_ref(&f.ca.root), late, Span::ZERO),
        Err(VerifyError::Expired { .. })
    ));
}

#[test]
fn zero_lifetime_is_rejected() {
    let mut f = fixture();
    assert_eq!(
        f.ca.issue_cert("/O=Grid/CN=x", Span::ZERO, "p", issue_time(), &mut f.rng).unwrap_err(),
        GsiError::InvalidLifetime
    );
}

#[test]
fn proxy_lasts_twelve_hours() {
    let mut f = fixture();
    let proxy = proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    assert_eq!(proxy.not_after().ctime(), "Thu Feb 14 01:11:48 2013");
    assert_eq!(proxy.subject(), format!("{}/CN=proxy", f.cert.subject));
    assert_eq!(proxy.leaf().issuer, f.cert.subject);
    assert_eq!(proxy.chain.len(), 2);
    let info = proxy_info(&proxy, proxy_time());
    assert_eq!(info.time_left.hms(), "12:00:00");
    assert!(!info.expired);
    assert_eq!(info.identity, f.cert.subject);
    assert_eq!(
        verify_chain(&proxy.chain, std::slice::from_ref(&f.ca.root), proxy_time(), Span::ZERO),
        Ok(())
    );
}

#[test]
fn proxy_info_after_expiry() {
    let mut f = fixture();
    let proxy = proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    let info = proxy_info(&proxy, proxy_time() + Span::from_hours(13));
    assert_eq!(info.time_left, Span::ZERO);
    assert!(info.expired);
}

#[test]
fn wrong_passphrase_is_rejected() {
    let mut f = fixture();
    assert_eq!(
        proxy_init(&f.cert, &f.key, "nope", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap_err(),
        GsiError::BadPassphrase
    );
}

#[test]
fn expired_user_cert_cannot_make_proxies() {
    let mut f = fixture();
    let later = f.cert.not_after + Span::from_secs(1);
    assert!(matches!(
        proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, later, &mut f.rng),
        Err(GsiError::UserCertExpired(_))
    ));
}

#[test]
fn proxy_lifetime_is_clipped_to_user_cert() {
    let mut f = fixture();
    let (short, key) = f
        .ca
        .issue_cert(&user_dn(&f.ca.name, "Short"), Span::from_hours(2), "p", proxy_time(), &mut f.rng)
        .unwrap();
    let proxy = proxy_init(&short, &key, "p", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    assert_eq!(proxy.not_after(), short.not_after);
}

#[test]
fn clock_skew_semantics() {
    let mut f = fixture();
    let proxy = proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    let anchors = [f.ca.root.clone()];
    let behind = proxy_time() - Span::from_secs(300);
    let err = verify_chain(&proxy.chain, &anchors, behind, Span::from_secs(60)).unwrap_err();
    assert_eq!(err.code(), "FutureCertificate");
    assert!(err.to_string().contains("You have sent a certificate with future date/time"));
    assert_eq!(verify_chain(&proxy.chain, &anchors, behind, Span::from_secs(600)), Ok(()));

    let after = proxy.not_after() + Span::from_secs(120);
    assert_eq!(
        verify_chain(&proxy.chain, &anchors, after, Span::from_secs(60)).unwrap_err().code(),
        "Expired"
    );
    assert_eq!(verify_chain(&proxy.chain, &anchors, after, Span::from_secs(600)), Ok(()));
}

#[test]
fn delegation_extends_the_chain() {
    let mut f = fixture();
    let proxy = proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    let later = proxy_time() + Span::from_secs(60);
    let d = proxy.delegate(later, DEFAULT_PROXY_LIFETIME, &mut f.rng).unwrap();
    assert_eq!(d.chain.len(), 3);
    assert_eq!(d.subject(), format!("{}/CN=proxy/CN=proxy", f.cert.subject));
    assert_eq!(d.not_after(), proxy.not_after());
    assert_eq!(d.leaf().not_before, later);
    assert_eq!(d.identity(), f.cert.subject);
    assert_eq!(verify_chain(&d.chain, std::slice::from_ref(&f.ca.root), later, Span::ZERO), Ok(()));
    assert!(matches!(
        proxy.delegate(proxy.not_after(), DEFAULT_PROXY_LIFETIME, &mut f.rng),
        Err(GsiError::ProxyExpired(_))
    ));
}

#[test]
fn misnamed_proxy_is_invalid() {
    let mut f = fixture();
    let user_key = f.key.unlock("globus").unwrap();
    let k = SecretKey::generate(&mut f.rng);
    let leaf = Certificate::sign(
        "/O=Grid/CN=someone else",
        &f.cert.subject,
        proxy_time(),
        proxy_time() + Span::from_hours(1),
        k.public(),
        &user_key,
    )
    .unwrap();
    assert!(matches!(
        verify_chain(&[leaf, f.cert.clone()], std::slice::from_ref(&f.ca.root), proxy_time(), Span::ZERO),
        Err(VerifyError::InvalidProxy { .. })
    ));
    assert_eq!(
        verify_chain(&[], std::slice::from_ref(&f.ca.root), proxy_time(), Span::ZERO),
        Err(VerifyError::EmptyChain)
    );
}

#[test]
fn credential_directory_round_trip() {
    let mut f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let creds = CredentialDir::new(dir.path().join(".minigrid"));
    assert!(matches!(creds.load_proxy(), Err(GsiError::NoProxyFound(_))));
    assert!(matches!(creds.load_user(), Err(GsiError::NoUserCert(_))));
    creds.save_user(&f.cert, &f.key).unwrap();
    let (cert, key) = creds.load_user().unwrap();
    assert_eq!((&cert, &key), (&f.cert, &f.key));
    let proxy = proxy_init(&cert, &key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    creds.save_proxy(&proxy).unwrap();
    assert_eq!(creds.load_proxy().unwrap(), proxy);
    assert!(creds.remove_proxy().unwrap());
    assert!(!creds.remove_proxy().unwrap());
}

#[test]
fn trust_directory_round_trip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let trust = dir.path().join("certificates");
    assert!(load_trust_dir(&trust).unwrap().is_empty());
    install_anchor(&trust, &f.ca.root).unwrap();
    assert_eq!(load_trust_dir(&trust).unwrap(), vec![f.ca.root.clone()]);
}

#[test]
fn gridmap_strips_one_proxy_suffix() {
    let mut f = fixture();
    let mut map = GridMap::new();
    map.insert(&f.cert.subject, "gtuser");
    let parsed = GridMap::parse(&map.render()).unwrap();
    assert_eq!(parsed, map);

    let proxy = proxy_init(&f.cert, &f.key, "globus", DEFAULT_PROXY_LIFETIME, proxy_time(), &mut f.rng).unwrap();
    assert_eq!(map.authorize(proxy.subject(), &proxy.chain), Ok("gtuser".into()));
    assert_eq!(map.authorize(&f.cert.subject, &proxy.chain), Ok("gtuser".into()));
    let twice = format!("{}/CN=proxy", proxy.subject());
    assert!(matches!(
        map.authorize(&twice, &proxy.chain),
        Err(AuthzError::IdentityMismatch { .. })
    ));
    let empty = GridMap::new();
    assert_eq!(
        empty.authorize(proxy.subject(), &proxy.chain).unwrap_err().code(),
        "NotAuthorized"
    );
    assert!(GridMap::parse("no quotes here\n").is_err());
    assert!(GridMap::parse("# comment\n\n").unwrap().lookup("x").is_none());
}

proptest! {
    #[test]
    fn fresh_proxies_always_verify(seed in any::<u64>(), start in 0i64..400 * 24 * 3600, hours in 1i64..48) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ca = CertificateAuthority::create("simpleCA-x", issue_time(), &mut rng).unwrap();
        let (cert, key) = ca.issue_cert("/O=Grid/CN=U", Span::from_hours(24 * 365), "pw", issue_time(), &mut rng).unwrap();
        let now = issue_time() + Span::from_secs(start);
        match proxy_init(&cert, &key, "pw", Span::from_hours(hours), now, &mut rng) {
            Ok(proxy) => {
                prop_assert!(proxy.leaf().not_before >= cert.not_before);
                prop_assert!(proxy.leaf().not_after <= cert.not_after);
                prop_assert_eq!(verify_chain(&proxy.chain, std::slice::from_ref(&ca.root), now, Span::ZERO), Ok(()));
                prop_assert_eq!(ProxyCredential::from_armored(&proxy.to_armored()).unwrap(), proxy);
            }
            Err(e) => prop_assert_eq!(e.code(), "UserCertExpired"),
        }
    }

    #[test]
    fn skew_failures_are_exclusive(offset in -20_000i64..20_000, skew in 0i64..600) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ca = CertificateAuthority::create("simpleCA-x", issue_time(), &mut rng).unwrap();
        let (cert, key) = ca.issue_cert("/O=Grid/CN=U", Span::from_hours(24 * 365), "pw", issue_time(), &mut rng).unwrap();
        let t = proxy_time();
        let proxy = proxy_init(&cert, &key, "pw", Span::from_hours(1), t, &mut rng).unwrap();
        let now = t + Span::from_secs(offset);
        let skew = Span::from_secs(skew);
        let future = now < proxy.leaf().not_before - skew;
        let expired = now > proxy.leaf().not_after + skew;
        let res = verify_chain(&proxy.chain, std::slice::from_ref(&ca.root), now, skew);
        match res {
            Ok(()) => prop_assert!(!future && !expired),
            Err(VerifyError::FutureCertificate { .. }) => prop_assert!(future && !expired),
            Err(VerifyError::Expired { .. }) => prop_assert!(expired && !future),
            Err(e) => prop_assert!(false, "unexpected {e:?}"),
        }
    }
}
