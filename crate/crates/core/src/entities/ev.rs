use std::collections::BTreeMap;

use crate::crypto::{Digest, FieldInt, OpCounters, Point};

use super::messages::{RegistrationRequest, RegistrationResponse, M1, M2, M5};
use super::tokens::{auth_cag, auth_ev};
use super::{
    check_fresh, AuthError, Credentials, PseudoId, PublicParams, SessionId, Timestamp,
    TokenCheck, TrueId,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvPhase {
    /// M2 sent, waiting for the CAG's token via the CS.
    AwaitM5,
    /// CAG verified; the session reference is `Auth_CAG`.
    Authenticated { session_ref: Digest },
    Terminated(AuthError),
}

#[derive(Debug, Clone)]
struct EvSession {
    phase: EvPhase,
    ptd_cs: PseudoId,
}

/// Electric vehicle: answers M1 with M2 and checks the CAG's token in M5.
#[derive(Debug, Clone)]
pub struct Vehicle<T> {
    params: PublicParams<T>,
    true_id: TrueId,
    credentials: Option<Credentials<T>>,
    sessions: BTreeMap<SessionId, EvSession>,
    meter: OpCounters,
}

/// Builds `TK0 = TD || T` for the registration channel.
pub fn ev_register(true_id: &TrueId, clock: Timestamp) -> RegistrationRequest {
    RegistrationRequest { true_id: true_id.clone(), timestamp: clock }
}

impl<T: FieldInt> Vehicle<T> {
    pub fn new(true_id: TrueId, params: PublicParams<T>) -> Self {
        Self { params, true_id, credentials: None, sessions: BTreeMap::new(), meter: OpCounters::new() }
    }

    pub fn true_id(&self) -> &TrueId {
        &self.true_id
    }

    pub fn registration_request(&self, now: Timestamp) -> RegistrationRequest {
        ev_register(&self.true_id, now)
    }

    /// Keeps `{PTD, SK}` from the CAG's response; the public key is not stored.
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

    pub fn phase(&self, session: SessionId) -> Option<&EvPhase> {
        self.sessions.get(&session).map(|s| &s.phase)
    }

    pub fn sessions(&self) -> impl Iterator<Item = (SessionId, &EvPhase)> {
        self.sessions.iter().map(|(id, s)| (*id, &s.phase))
    }

    fn terminate(&mut self, session: SessionId, ptd_cs: PseudoId, err: AuthError) -> AuthError {
        self.sessions
            .entry(session)
            .and_modify(|s| {
                if s.phase == EvPhase::AwaitM5 {
                    s.phase = EvPhase::Terminated(err.clone());
                }
            })
            .or_insert(EvSession { phase: EvPhase::Terminated(err.clone()), ptd_cs });
        err
    }

    /// Ends a session on input that never reached a handler, e.g. an
    /// undecodable message.
    pub fn abort(&mut self, session: SessionId, err: AuthError) -> AuthError {
        self.terminate(session, PseudoId(Digest::ZERO), err)
    }

    /// Validates `T_CS`, computes `R2 = SK_EV * R1` and both EV tokens.
    /// One ECM and two hashes.
    pub fn handle_m1(
        &mut self,
        session: SessionId,
        m1: &M1<T>,
        now: Timestamp,
    ) -> Result<M2, AuthError> {
        if let Err(err) = check_fresh(m1.t_cs, now, self.params.window) {
            return Err(self.terminate(session, m1.ptd_cs, err));
        }
        if self.sessions.contains_key(&session) {
            return Err(AuthError::DuplicateSession(session));
        }
        let creds = self.credentials.clone().ok_or(AuthError::NotRegistered)?;
        let r2 = match self.params.curve.scalar_mult(creds.sk.value(), &m1.r1_point, &mut self.meter)
        {
            Ok(point) => point,
            Err(err) => return Err(self.terminate(session, m1.ptd_cs, err.into())),
        };
        let t_ev = now;
        let auth_ev_cs = auth_ev(
            &self.params.curve,
            &m1.r1_point,
            &r2,
            &creds.pseudo_id,
            &m1.ptd_cs,
            t_ev,
            &mut self.meter,
        );
        let auth_ev_cag = auth_ev(
            &self.params.curve,
            &m1.r1_point,
            &r2,
            &creds.pseudo_id,
            &self.params.ptd_cag,
            t_ev,
            &mut self.meter,
        );
        self.sessions.insert(session, EvSession { phase: EvPhase::AwaitM5, ptd_cs: m1.ptd_cs });
        Ok(M2 { auth_ev_cs, auth_ev_cag, t_ev, ptd_ev: creds.pseudo_id })
    }

    /// Recomputes `Auth_CAG` from `r1 * PK_CAG`. One ECM and one hash.
    /// Returns the session reference on success.
    pub fn handle_m5(
        &mut self,
        session: SessionId,
        m5: &M5<T>,
        now: Timestamp,
    ) -> Result<Digest, AuthError> {
        let state = self.sessions.get(&session).cloned().ok_or(AuthError::NoSession(session))?;
        if let Err(err) = check_fresh(m5.t_cag, now, self.params.window) {
            return Err(self.terminate(session, state.ptd_cs, err));
        }
        if state.phase != EvPhase::AwaitM5 {
            return Err(AuthError::WrongPhase(session));
        }
        let creds = self.credentials.clone().ok_or(AuthError::NotRegistered)?;
        let shared: Point<T> =
            match self.params.curve.scalar_mult(m5.r1.value(), &self.params.pk_cag, &mut self.meter) {
                Ok(point) => point,
                Err(err) => return Err(self.terminate(session, state.ptd_cs, err.into())),
            };
        let expected = auth_cag(
            &self.params.curve,
            &shared,
            &creds.pseudo_id,
            &state.ptd_cs,
            &self.params.ptd_cag,
            m5.t_cag,
            &mut self.meter,
        );
        if expected != m5.auth_cag {
            return Err(self.terminate(
                session,
                state.ptd_cs,
                AuthError::TokenMismatch(TokenCheck::CagAtEv),
            ));
        }
        let session_ref = m5.auth_cag;
        if let Some(s) = self.sessions.get_mut(&session) {
            s.phase = EvPhase::Authenticated { session_ref };
        }
        Ok(session_ref)
    }
}
