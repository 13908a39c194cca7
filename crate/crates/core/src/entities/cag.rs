use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use thiserror::Error;

use crate::consensus::tx::{Transaction, TxInvalid};
use crate::crypto::{keygen, CurveParams, Digest, FieldInt, KeyPair, OpCounters, Point};

use super::messages::{RegistrationRequest, RegistrationResponse, M3, M4};
use super::registry::{RegisteredKey, Registry};
use super::tokens::{aggregator_pseudo_id, auth_cag, auth_cs_cag, auth_ev, pseudo_id};
use super::{
    check_fresh, validate_timestamp, AuthError, FreshnessWindow, PseudoId, PublicParams, Role,
    Timestamp, TokenCheck, TrueId,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("stale registration timestamp {ts} at {now}")]
    Stale { ts: Timestamp, now: Timestamp },
    #[error("{0} is already registered")]
    AlreadyRegistered(TrueId),
    #[error("{0} is on the revocation list")]
    Revoked(TrueId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxRejection {
    #[error("session reference was never authenticated by the aggregator")]
    UnknownSession,
    #[error("session already produced a reward")]
    AlreadyRewarded,
    #[error("transaction parties do not match the authenticated session")]
    PartyMismatch,
    #[error(transparent)]
    Invalid(#[from] TxInvalid),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRecord<T> {
    pub pseudo_id: PseudoId,
    pub public_key: Point<T>,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct VouchedSession {
    ptd_ev: PseudoId,
    ptd_cs: PseudoId,
    rewarded: bool,
}

/// Central aggregator: trust anchor for registration and the final verifier
/// in each authentication run.
#[derive(Debug)]
pub struct Aggregator<T> {
    params: PublicParams<T>,
    keys: KeyPair<T>,
    repository: BTreeMap<TrueId, RegistrationRecord<T>>,
    revocation_list: BTreeSet<TrueId>,
    registry: Registry<T>,
    seen_r1: HashMap<Vec<u8>, Timestamp>,
    vouched: BTreeMap<Digest, VouchedSession>,
    setup_meter: OpCounters,
    meter: OpCounters,
}

impl<T: FieldInt> Aggregator<T> {
    /// System initialization: key pair, `PK_CAG = SK_CAG * P`, and `PTD_CAG`.
    pub fn setup<R: RngCore + ?Sized>(
        curve: CurveParams<T>,
        window: FreshnessWindow,
        rng: &mut R,
    ) -> Self {
        let mut setup_meter = OpCounters::new();
        let keys = keygen(rng, &curve, &mut setup_meter);
        let ptd_cag = aggregator_pseudo_id(&curve, &keys.sk, &mut setup_meter);
        let params = PublicParams { curve, pk_cag: keys.pk.clone(), ptd_cag, window };
        Self {
            params,
            keys,
            repository: BTreeMap::new(),
            revocation_list: BTreeSet::new(),
            registry: Registry::default(),
            seen_r1: HashMap::new(),
            vouched: BTreeMap::new(),
            setup_meter,
            meter: OpCounters::new(),
        }
    }

    pub fn params(&self) -> &PublicParams<T> {
        &self.params
    }

    /// Read handle on the published `PTD -> PK` directory.
    pub fn registry(&self) -> Registry<T> {
        self.registry.clone()
    }

    pub fn meter(&self) -> OpCounters {
        self.meter
    }

    /// ECM/hash spent on initialization and registration, kept apart from
    /// the per-run authentication meter.
    pub fn setup_meter(&self) -> OpCounters {
        self.setup_meter
    }

    pub fn revoke(&mut self, true_id: TrueId) {
        self.revocation_list.insert(true_id);
    }

    pub fn record(&self, true_id: &TrueId) -> Option<&RegistrationRecord<T>> {
        self.repository.get(true_id)
    }

    pub fn repository_len(&self) -> usize {
        self.repository.len()
    }

    /// Registration Steps 3-7: timestamp, repository and revocation checks,
    /// then a fresh key pair and `PTD = H(SK || TD)`.
    pub fn register<R: RngCore + ?Sized>(
        &mut self,
        request: &RegistrationRequest,
        now: Timestamp,
        rng: &mut R,
    ) -> Result<RegistrationResponse<T>, RegistrationError> {
        if !validate_timestamp(request.timestamp, now, self.params.window) {
            return Err(RegistrationError::Stale { ts: request.timestamp, now });
        }
        let id = &request.true_id;
        if self.repository.contains_key(id) {
            return Err(RegistrationError::AlreadyRegistered(id.clone()));
        }
        if self.revocation_list.contains(id) {
            return Err(RegistrationError::Revoked(id.clone()));
        }
        let (keys, ptd) = loop {
            let keys = keygen(rng, &self.params.curve, &mut self.setup_meter);
            let ptd = pseudo_id(&self.params.curve, &keys.sk, id, &mut self.setup_meter)
                .expect("identity already encoded once in the request");
            if self.registry.lookup(&ptd).is_none() && ptd != self.params.ptd_cag {
                break (keys, ptd);
            }
        };
        let record = RegistrationRecord { pseudo_id: ptd, public_key: keys.pk.clone(), role: id.role() };
        self.registry.publish(ptd, RegisteredKey { role: id.role(), public_key: keys.pk.clone() });
        self.repository.insert(id.clone(), record);
        Ok(RegistrationResponse { pseudo_id: ptd, public_key: keys.pk, private_key: keys.sk })
    }

    /// Steps 6-7: recompute `Auth*_EV-CAG` and `Auth*_CS-CAG`, then answer
    /// with `Auth_CAG` over `R5 = SK_CAG * R1`. Three ECM, three hashes.
    pub fn handle_m3(&mut self, m3: &M3<T>, now: Timestamp) -> Result<M4, AuthError> {
        let window = self.params.window;
        check_fresh(m3.t_ev, now, window)?;
        check_fresh(m3.t_cs, now, window)?;
        let curve = &self.params.curve;
        let r1_key = curve.encode_point(&m3.r1_point);
        self.seen_r1.retain(|_, seen| validate_timestamp(*seen, now, window));
        if self.seen_r1.contains_key(&r1_key) {
            return Err(AuthError::ReplayedNonce);
        }
        let pk_ev = self
            .registry
            .key_for(&m3.ptd_ev, Role::Ev)
            .ok_or(AuthError::UnknownPseudoId(m3.ptd_ev))?;
        let pk_cs = self
            .registry
            .key_for(&m3.ptd_cs, Role::Cs)
            .ok_or(AuthError::UnknownPseudoId(m3.ptd_cs))?;
        let ptd_cag = self.params.ptd_cag;

        let ev_shared = curve.scalar_mult(m3.r1.value(), &pk_ev, &mut self.meter)?;
        let auth_ev_cag =
            auth_ev(curve, &m3.r1_point, &ev_shared, &m3.ptd_ev, &ptd_cag, m3.t_ev, &mut self.meter);
        let cs_shared = curve.scalar_mult(m3.r2.value(), &pk_cs, &mut self.meter)?;
        let expected =
            auth_cs_cag(curve, &cs_shared, &m3.ptd_cs, &ptd_cag, m3.t_cs, &auth_ev_cag, &mut self.meter);
        if expected != m3.auth_cs_cag {
            return Err(AuthError::TokenMismatch(TokenCheck::CsAndEvAtCag));
        }
        self.seen_r1.insert(r1_key, now);

        let r5 = curve.scalar_mult(self.keys.sk.value(), &m3.r1_point, &mut self.meter)?;
        let t_cag = now;
        let token = auth_cag(curve, &r5, &m3.ptd_ev, &m3.ptd_cs, &ptd_cag, t_cag, &mut self.meter);
        self.vouched
            .insert(token, VouchedSession { ptd_ev: m3.ptd_ev, ptd_cs: m3.ptd_cs, rewarded: false });
        Ok(M4 { auth_cag: token, t_cag })
    }

    /// Gatekeeper before broadcast: the transaction must reference a session
    /// this aggregator vouched for, between the same parties, once.
    pub fn accept_transaction(&mut self, tx: &Transaction) -> Result<(), TxRejection> {
        tx.validate()?;
        let session =
            self.vouched.get_mut(&tx.auth_session_ref).ok_or(TxRejection::UnknownSession)?;
        if session.ptd_ev != tx.ev_pseudo_id || session.ptd_cs != tx.cs_pseudo_id {
            return Err(TxRejection::PartyMismatch);
        }
        if session.rewarded {
            return Err(TxRejection::AlreadyRewarded);
        }
        session.rewarded = true;
        Ok(())
    }
}
