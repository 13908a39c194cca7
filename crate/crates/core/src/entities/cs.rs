use std::collections::{BTreeMap, HashSet};

use rand::RngCore;
use rust_decimal::Decimal;
use thiserror::Error;

use crate::consensus::tx::{Transaction, TxInvalid};
use crate::crypto::{Digest, FieldInt, OpCounters, Point, Scalar};

use super::messages::{RegistrationResponse, ServiceRequest, M1, M2, M3, M4, M5};
use super::registry::Registry;
use super::tokens::{auth_cag, auth_cs_cag, auth_ev};
use super::{
    check_fresh, AuthError, Credentials, PseudoId, PublicParams, Role, SessionId, Timestamp,
    TokenCheck, TrueId,
};

/// Draws before giving up on finding an unused `r1` (only reachable on tiny curves).
const NONCE_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CsPhase {
    AwaitM2,
    AwaitM4,
    /// M5 forwarded; waiting for the EV to start the energy session.
    AwaitService { session_ref: Digest },
    /// Reward transaction created for this session.
    Served { session_ref: Digest },
    Terminated(AuthError),
}

impl CsPhase {
    pub fn is_authenticated(&self) -> bool {
        matches!(self, CsPhase::AwaitService { .. } | CsPhase::Served { .. })
    }
}

#[derive(Debug, Clone)]
struct CsSession<T> {
    phase: CsPhase,
    r1: Scalar<T>,
    r1_point: Point<T>,
    ptd_ev: Option<PseudoId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServiceError {
    #[error("no authenticated session {0} awaiting service")]
    NotAwaiting(SessionId),
    #[error("session reference does not match")]
    WrongReference,
    #[error(transparent)]
    Invalid(#[from] TxInvalid),
}

/// Charging station: opens each run with M1, verifies the EV (Step 4),
/// vouches for itself to the CAG (M3), and verifies the CAG's answer.
#[derive(Debug, Clone)]
pub struct Station<T> {
    params: PublicParams<T>,
    true_id: TrueId,
    credentials: Option<Credentials<T>>,
    registry: Registry<T>,
    sessions: BTreeMap<SessionId, CsSession<T>>,
    used_nonces: HashSet<T>,
    meter: OpCounters,
}

impl<T: FieldInt> Station<T> {
    pub fn new(true_id: TrueId, params: PublicParams<T>, registry: Registry<T>) -> Self {
        Self {
            params,
            true_id,
            credentials: None,
            registry,
            sessions: BTreeMap::new(),
            used_nonces: HashSet::new(),
            meter: OpCounters::new(),
        }
    }

    pub fn true_id(&self) -> &TrueId {
        &self.true_id
    }

    pub fn complete_registration(&mut self, response: RegistrationResponse<T>) {
        self.credentials =
            Some(Credentials { pseudo_id: response.pseudo_id, sk: response.private_key });
    }

    pub fn pseudo_id(&self) -> Option<PseudoId> {
        self.credentials.as_ref().map(|c| c.pseudo_id)
    }

    pub fn meter(&self) -> OpCounters {
        self.meter
    }

    pub fn phase(&self, session: SessionId) -> Option<&CsPhase> {
        self.sessions.get(&session).map(|s| &s.phase)
    }

    pub fn sessions(&self) -> impl Iterator<Item = (SessionId, &CsPhase)> {
        self.sessions.iter().map(|(id, s)| (*id, &s.phase))
    }

    fn terminate(&mut self, session: SessionId, err: AuthError) -> AuthError {
        if let Some(s) = self.sessions.get_mut(&session) {
            if matches!(s.phase, CsPhase::AwaitM2 | CsPhase::AwaitM4) {
                s.phase = CsPhase::Terminated(err.clone());
            }
        }
        err
    }

    /// Ends a session on input that never reached a handler.
    pub fn abort(&mut self, session: SessionId, err: AuthError) -> AuthError {
        self.terminate(session, err)
    }

    fn fresh_nonce<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> Result<Scalar<T>, AuthError> {
        for _ in 0..NONCE_ATTEMPTS {
            let r1 = Scalar::random(rng, &self.params.curve);
            if self.used_nonces.insert(r1.value().clone()) {
                return Ok(r1);
            }
        }
        Err(AuthError::NonceExhausted)
    }

    /// Step 1: fresh `r1`, `R1 = r1 * P`, `M1 = <R1, PTD_CS, T_CS>`. One ECM.
    pub fn auth_init<R: RngCore + ?Sized>(
        &mut self,
        session: SessionId,
        rng: &mut R,
        now: Timestamp,
    ) -> Result<M1<T>, AuthError> {
        if self.sessions.contains_key(&session) {
            return Err(AuthError::DuplicateSession(session));
        }
        let ptd_cs = self.pseudo_id().ok_or(AuthError::NotRegistered)?;
        let r1 = self.fresh_nonce(rng)?;
        let r1_point =
            self.params.curve.scalar_mult(r1.value(), self.params.curve.generator(), &mut self.meter)?;
        self.sessions.insert(
            session,
            CsSession { phase: CsPhase::AwaitM2, r1, r1_point: r1_point.clone(), ptd_ev: None },
        );
        Ok(M1 { r1_point, ptd_cs, t_cs: now })
    }

    /// Steps 4-5: verify `Auth_EV-CS` via `r1 * PK_EV`, then build
    /// `Auth_CS-CAG` over `R4 = SK_CS * (r2 * P)`. Three ECM, two hashes.
    pub fn handle_m2<R: RngCore + ?Sized>(
        &mut self,
        session: SessionId,
        m2: &M2,
        rng: &mut R,
        now: Timestamp,
    ) -> Result<M3<T>, AuthError> {
        let state = self.sessions.get(&session).cloned().ok_or(AuthError::NoSession(session))?;
        if let Err(err) = check_fresh(m2.t_ev, now, self.params.window) {
            return Err(self.terminate(session, err));
        }
        if state.phase != CsPhase::AwaitM2 {
            return Err(AuthError::WrongPhase(session));
        }
        let creds = self.credentials.clone().ok_or(AuthError::NotRegistered)?;
        let Some(pk_ev) = self.registry.key_for(&m2.ptd_ev, Role::Ev) else {
            return Err(self.terminate(session, AuthError::UnknownPseudoId(m2.ptd_ev)));
        };
        let curve = &self.params.curve;
        let shared = curve.scalar_mult(state.r1.value(), &pk_ev, &mut self.meter)?;
        let expected = auth_ev(
            curve,
            &state.r1_point,
            &shared,
            &m2.ptd_ev,
            &creds.pseudo_id,
            m2.t_ev,
            &mut self.meter,
        );
        if expected != m2.auth_ev_cs {
            return Err(self.terminate(session, AuthError::TokenMismatch(TokenCheck::EvAtCs)));
        }

        let r2 = Scalar::random(rng, curve);
        let r3 = curve.scalar_mult(r2.value(), curve.generator(), &mut self.meter)?;
        let r4 = curve.scalar_mult(creds.sk.value(), &r3, &mut self.meter)?;
        let t_cs = now;
        let auth_cs_cag = auth_cs_cag(
            curve,
            &r4,
            &creds.pseudo_id,
            &self.params.ptd_cag,
            t_cs,
            &m2.auth_ev_cag,
            &mut self.meter,
        );
        if let Some(s) = self.sessions.get_mut(&session) {
            s.phase = CsPhase::AwaitM4;
            s.ptd_ev = Some(m2.ptd_ev);
        }
        Ok(M3 {
            auth_cs_cag,
            t_cs,
            t_ev: m2.t_ev,
            r1: state.r1,
            r2,
            r1_point: state.r1_point,
            ptd_ev: m2.ptd_ev,
            ptd_cs: creds.pseudo_id,
        })
    }

    /// Step 8: verify `Auth_CAG` via `r1 * PK_CAG` and forward it with `r1`.
    /// One ECM, one hash.
    pub fn handle_m4(
        &mut self,
        session: SessionId,
        m4: &M4,
        now: Timestamp,
    ) -> Result<M5<T>, AuthError> {
        let state = self.sessions.get(&session).cloned().ok_or(AuthError::NoSession(session))?;
        if let Err(err) = check_fresh(m4.t_cag, now, self.params.window) {
            return Err(self.terminate(session, err));
        }
        let (CsPhase::AwaitM4, Some(ptd_ev)) = (&state.phase, state.ptd_ev) else {
            return Err(AuthError::WrongPhase(session));
        };
        let creds = self.credentials.clone().ok_or(AuthError::NotRegistered)?;
        let curve = &self.params.curve;
        let shared = curve.scalar_mult(state.r1.value(), &self.params.pk_cag, &mut self.meter)?;
        let expected = auth_cag(
            curve,
            &shared,
            &ptd_ev,
            &creds.pseudo_id,
            &self.params.ptd_cag,
            m4.t_cag,
            &mut self.meter,
        );
        if expected != m4.auth_cag {
            return Err(self.terminate(session, AuthError::TokenMismatch(TokenCheck::CagAtCs)));
        }
        if let Some(s) = self.sessions.get_mut(&session) {
            s.phase = CsPhase::AwaitService { session_ref: m4.auth_cag };
        }
        Ok(M5 { auth_cag: m4.auth_cag, t_cag: m4.t_cag, r1: state.r1 })
    }

    /// Creates the reward transaction once the EV has asked for service on a
    /// fully authenticated session. At most one per session.
    pub fn handle_service(
        &mut self,
        session: SessionId,
        request: &ServiceRequest,
        price_per_kwh: Decimal,
        now: Timestamp,
    ) -> Result<Transaction, ServiceError> {
        let cs_ptd = self.pseudo_id().ok_or(ServiceError::NotAwaiting(session))?;
        let state = self.sessions.get_mut(&session).ok_or(ServiceError::NotAwaiting(session))?;
        let (CsPhase::AwaitService { session_ref }, Some(ptd_ev)) = (&state.phase, state.ptd_ev)
        else {
            return Err(ServiceError::NotAwaiting(session));
        };
        if *session_ref != request.session_ref {
            return Err(ServiceError::WrongReference);
        }
        let tx = Transaction::new(
            ptd_ev,
            cs_ptd,
            request.energy_kwh,
            price_per_kwh,
            *session_ref,
            now,
        )?;
        state.phase = CsPhase::Served { session_ref: *session_ref };
        Ok(tx)
    }
}
