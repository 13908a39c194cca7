use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rust_decimal::Decimal;

use v2g_core::crypto::{CurveParams, FieldInt, OpCounters, Point, Scalar};
use v2g_core::entities::cag::TxRejection;
use v2g_core::entities::cs::ServiceError;
use v2g_core::entities::tokens::auth_ev;
use v2g_core::entities::{
    Aggregator, AuthError, CsPhase, EvPhase, FreshnessWindow, RegistrationError, Role, ServiceRequest,
    SessionId, Station, Timestamp, TokenCheck, TrueId, Vehicle, M2,
};

struct Parties<T> {
    cag: Aggregator<T>,
    cs: Station<T>,
    ev: Vehicle<T>,
    rng: ChaCha20Rng,
}

fn setup<T: FieldInt>(curve: CurveParams<T>, seed: u64) -> Parties<T> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut cag = Aggregator::setup(curve, FreshnessWindow::default(), &mut rng);
    let now = Timestamp(0);
    let mut ev = Vehicle::new(TrueId::new(Role::Ev, "EV-1").unwrap(), cag.params().clone());
    let mut cs =
        Station::new(TrueId::new(Role::Cs, "CS-1").unwrap(), cag.params().clone(), cag.registry());
    let resp = cag.register(&ev.registration_request(now), now, &mut rng).unwrap();
    ev.complete_registration(resp);
    let req = v2g_core::entities::ev::ev_register(cs.true_id(), now);
    let resp = cag.register(&req, now, &mut rng).unwrap();
    cs.complete_registration(resp);
    Parties { cag, cs, ev, rng }
}

fn run<T: FieldInt>(p: &mut Parties<T>, sid: SessionId, now: u64) -> Result<(), AuthError> {
    let t = Timestamp(now);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t)?;
    let m2 = p.ev.handle_m1(sid, &m1, t)?;
    let m3 = p.cs.handle_m2(sid, &m2, &mut p.rng, t)?;
    let m4 = p.cag.handle_m3(&m3, t)?;
    let m5 = p.cs.handle_m4(sid, &m4, t)?;
    p.ev.handle_m5(sid, &m5, t)?;
    Ok(())
}

#[test]
fn honest_run_toy_and_p256() {
    let mut toy = setup(CurveParams::toy(), 1);
    run(&mut toy, SessionId(1), 10).unwrap();
    assert!(toy.cs.phase(SessionId(1)).unwrap().is_authenticated());
    assert!(matches!(toy.ev.phase(SessionId(1)), Some(EvPhase::Authenticated { .. })));

    let mut prod = setup(CurveParams::p256(), 2);
    run(&mut prod, SessionId(1), 10).unwrap();
    assert!(prod.cs.phase(SessionId(1)).unwrap().is_authenticated());
}

#[test]
fn both_ends_agree_on_session_reference() {
    let mut p = setup(CurveParams::p256(), 5);
    run(&mut p, SessionId(7), 10).unwrap();
    let Some(EvPhase::Authenticated { session_ref: ev_ref }) = p.ev.phase(SessionId(7)).cloned() else {
        panic!("ev not authenticated")
    };
    let Some(CsPhase::AwaitService { session_ref: cs_ref }) = p.cs.phase(SessionId(7)).cloned() else {
        panic!("cs not authenticated")
    };
    assert_eq!(ev_ref, cs_ref);
}

#[test]
fn per_entity_operation_counts() {
    let mut p = setup(CurveParams::p256(), 3);
    let setup_ops = p.cag.setup_meter();
    run(&mut p, SessionId(1), 10).unwrap();
    assert_eq!(p.ev.meter(), OpCounters { ecm: 2, hash: 3 });
    assert_eq!(p.cs.meter(), OpCounters { ecm: 5, hash: 3 });
    assert_eq!(p.cag.meter(), OpCounters { ecm: 3, hash: 3 });
    assert_eq!(p.cag.setup_meter(), setup_ops);
}

#[test]
fn toy_curve_forged_shared_secret_exhaustive() {
    // Without SK_EV a forger can only guess R2 = k * G; try every k and check
    // that exactly the true one gets through the station.
    let mut p = setup(CurveParams::toy(), 4);
    let sid = SessionId(1);
    let t = Timestamp(10);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let honest = p.ev.clone().handle_m1(sid, &m1, t).unwrap();
    let curve = CurveParams::toy();
    let mut accepted = Vec::new();
    for k in 0..19u64 {
        let guess = if k == 0 {
            Point::Infinity
        } else {
            curve.scalar_mult(&k, curve.generator(), &mut OpCounters::new()).unwrap()
        };
        let token =
            auth_ev(&curve, &m1.r1_point, &guess, &honest.ptd_ev, &m1.ptd_cs, t, &mut OpCounters::new());
        let forged = M2 { auth_ev_cs: token, ..honest.clone() };
        let mut probe = p.cs.clone();
        match probe.handle_m2(sid, &forged, &mut p.rng, t) {
            Ok(_) => accepted.push(k),
            Err(err) => assert_eq!(err, AuthError::TokenMismatch(TokenCheck::EvAtCs)),
        }
    }
    assert_eq!(accepted.len(), 1);
}

#[test]
fn tampered_tokens_rejected_at_each_hop() {
    let mut p = setup(CurveParams::p256(), 6);
    let t = Timestamp(10);

    let sid = SessionId(1);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let mut m2 = p.ev.handle_m1(sid, &m1, t).unwrap();
    m2.auth_ev_cs.0[0] ^= 1;
    assert_eq!(
        p.cs.handle_m2(sid, &m2, &mut p.rng, t),
        Err(AuthError::TokenMismatch(TokenCheck::EvAtCs))
    );
    assert!(matches!(p.cs.phase(sid), Some(CsPhase::Terminated(_))));

    let sid = SessionId(2);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let mut m2 = p.ev.handle_m1(sid, &m1, t).unwrap();
    m2.auth_ev_cag.0[5] ^= 1;
    let m3 = p.cs.handle_m2(sid, &m2, &mut p.rng, t).unwrap();
    assert_eq!(p.cag.handle_m3(&m3, t), Err(AuthError::TokenMismatch(TokenCheck::CsAndEvAtCag)));

    let sid = SessionId(3);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let m2 = p.ev.handle_m1(sid, &m1, t).unwrap();
    let m3 = p.cs.handle_m2(sid, &m2, &mut p.rng, t).unwrap();
    let mut m4 = p.cag.handle_m3(&m3, t).unwrap();
    m4.auth_cag.0[31] ^= 0x80;
    assert_eq!(p.cs.handle_m4(sid, &m4, t), Err(AuthError::TokenMismatch(TokenCheck::CagAtCs)));

    let sid = SessionId(4);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let m2 = p.ev.handle_m1(sid, &m1, t).unwrap();
    let m3 = p.cs.handle_m2(sid, &m2, &mut p.rng, t).unwrap();
    let m4 = p.cag.handle_m3(&m3, t).unwrap();
    let mut m5 = p.cs.handle_m4(sid, &m4, t).unwrap();
    let curve = CurveParams::p256();
    let bumped = m5.r1.value() + num_bigint::BigUint::from(1u8);
    m5.r1 = Scalar::new(bumped, &curve).unwrap();
    assert_eq!(p.ev.handle_m5(sid, &m5, t), Err(AuthError::TokenMismatch(TokenCheck::CagAtEv)));
    assert!(matches!(p.ev.phase(sid), Some(EvPhase::Terminated(_))));
}

#[test]
fn freshness_window_is_inclusive() {
    let mut p = setup(CurveParams::toy(), 7);
    let window = FreshnessWindow::default().0;
    let m1 = p.cs.auth_init(SessionId(1), &mut p.rng, Timestamp(1_000)).unwrap();
    assert!(p.ev.clone().handle_m1(SessionId(1), &m1, Timestamp(1_000 + window)).is_ok());
    assert!(matches!(
        p.ev.handle_m1(SessionId(1), &m1, Timestamp(1_000 + window + 1)),
        Err(AuthError::Stale { .. })
    ));
    assert!(matches!(p.ev.phase(SessionId(1)), Some(EvPhase::Terminated(_))));
}

#[test]
fn unregistered_vehicle_rejected() {
    let mut p = setup(CurveParams::p256(), 8);
    let mut rogue_rng = ChaCha20Rng::seed_from_u64(99);
    let mut rogue_cag = Aggregator::setup(CurveParams::p256(), FreshnessWindow::default(), &mut rogue_rng);
    let mut rogue = Vehicle::new(TrueId::new(Role::Ev, "EV-X").unwrap(), p.cag.params().clone());
    let resp = rogue_cag.register(&rogue.registration_request(Timestamp(0)), Timestamp(0), &mut rogue_rng).unwrap();
    rogue.complete_registration(resp);

    let t = Timestamp(10);
    let m1 = p.cs.auth_init(SessionId(1), &mut p.rng, t).unwrap();
    let m2 = rogue.handle_m1(SessionId(1), &m1, t).unwrap();
    assert!(matches!(
        p.cs.handle_m2(SessionId(1), &m2, &mut p.rng, t),
        Err(AuthError::UnknownPseudoId(_))
    ));

    let mut never = Vehicle::new(TrueId::new(Role::Ev, "EV-Y").unwrap(), p.cag.params().clone());
    let m1 = p.cs.auth_init(SessionId(2), &mut p.rng, t).unwrap();
    assert_eq!(never.handle_m1(SessionId(2), &m1, t), Err(AuthError::NotRegistered));
}

#[test]
fn registration_rules() {
    let mut p = setup(CurveParams::toy(), 9);
    let now = Timestamp(50);
    let again = p.ev.registration_request(now);
    assert!(matches!(
        p.cag.register(&again, now, &mut p.rng),
        Err(RegistrationError::AlreadyRegistered(_))
    ));

    let banned = TrueId::new(Role::Ev, "EV-B").unwrap();
    p.cag.revoke(banned.clone());
    let req = v2g_core::entities::ev::ev_register(&banned, now);
    assert_eq!(p.cag.register(&req, now, &mut p.rng), Err(RegistrationError::Revoked(banned)));

    let late = TrueId::new(Role::Ev, "EV-L").unwrap();
    let req = v2g_core::entities::ev::ev_register(&late, Timestamp(0));
    assert!(matches!(
        p.cag.register(&req, Timestamp(10_000), &mut p.rng),
        Err(RegistrationError::Stale { .. })
    ));

    let fresh = TrueId::new(Role::Ev, "EV-2").unwrap();
    let req = v2g_core::entities::ev::ev_register(&fresh, now);
    let resp = p.cag.register(&req, now, &mut p.rng).unwrap();
    let curve = CurveParams::toy();
    let derived = curve.scalar_mult(resp.private_key.value(), curve.generator(), &mut OpCounters::new()).unwrap();
    assert_eq!(derived, resp.public_key);
    assert_eq!(p.cag.registry().key_for(&resp.pseudo_id, Role::Ev), Some(resp.public_key));
    assert_eq!(p.cag.registry().key_for(&resp.pseudo_id, Role::Cs), None);
    assert_eq!(p.cag.repository_len(), 3);
}

#[test]
fn replayed_m3_rejected_by_aggregator() {
    let mut p = setup(CurveParams::p256(), 10);
    let t = Timestamp(10);
    let sid = SessionId(1);
    let m1 = p.cs.auth_init(sid, &mut p.rng, t).unwrap();
    let m2 = p.ev.handle_m1(sid, &m1, t).unwrap();
    let m3 = p.cs.handle_m2(sid, &m2, &mut p.rng, t).unwrap();
    p.cag.handle_m3(&m3, t).unwrap();
    assert_eq!(p.cag.handle_m3(&m3, Timestamp(20)), Err(AuthError::ReplayedNonce));
}

#[test]
fn one_reward_per_authenticated_session() {
    let mut p = setup(CurveParams::p256(), 11);
    let sid = SessionId(1);
    let price = Decimal::new(30, 2);
    let early = ServiceRequest { session_ref: Default::default(), energy_kwh: Decimal::TEN };
    assert_eq!(p.cs.handle_service(sid, &early, price, Timestamp(0)), Err(ServiceError::NotAwaiting(sid)));

    run(&mut p, sid, 10).unwrap();
    let Some(EvPhase::Authenticated { session_ref }) = p.ev.phase(sid).cloned() else { panic!() };
    let req = ServiceRequest { session_ref, energy_kwh: Decimal::new(125, 1) };
    let tx = p.cs.handle_service(sid, &req, price, Timestamp(20)).unwrap();
    assert_eq!(tx.reward_amount, Decimal::new(375, 2));
    assert!(p.cs.handle_service(sid, &req, price, Timestamp(20)).is_err());

    assert_eq!(p.cag.accept_transaction(&tx), Ok(()));
    assert_eq!(p.cag.accept_transaction(&tx), Err(TxRejection::AlreadyRewarded));
    let mut forged = tx.clone();
    forged.auth_session_ref.0[0] ^= 1;
    assert_eq!(p.cag.accept_transaction(&forged), Err(TxRejection::UnknownSession));
}
