//! Hash preimages of the authentication tokens and pseudo identities.

use crate::crypto::{
    hash_concat, CodecError, CurveParams, Digest, Field, FieldInt, OpCounters, Point, Scalar,
};

use super::{PseudoId, Timestamp, TrueId};

/// `PTD = H(SK || TD)`
pub fn pseudo_id<T: FieldInt>(
    curve: &CurveParams<T>,
    sk: &Scalar<T>,
    true_id: &TrueId,
    meter: &mut OpCounters,
) -> Result<PseudoId, CodecError> {
    Ok(PseudoId(hash_concat(&[sk.to_field(curve), true_id.to_field()?], meter)))
}

/// `PTD_CAG = H(SK_CAG || "CAG")`
pub fn aggregator_pseudo_id<T: FieldInt>(
    curve: &CurveParams<T>,
    sk: &Scalar<T>,
    meter: &mut OpCounters,
) -> PseudoId {
    let label = Field::label("CAG").expect("short label");
    PseudoId(hash_concat(&[sk.to_field(curve), label], meter))
}

/// `H(R1 || R2 || PTD_EV || PTD_peer || T_EV)`; the peer is the CS for
/// `Auth_EV-CS` and the CAG for `Auth_EV-CAG`.
pub fn auth_ev<T: FieldInt>(
    curve: &CurveParams<T>,
    r1_point: &Point<T>,
    shared: &Point<T>,
    ptd_ev: &PseudoId,
    ptd_peer: &PseudoId,
    t_ev: Timestamp,
    meter: &mut OpCounters,
) -> Digest {
    hash_concat(
        &[
            curve.point_field(r1_point),
            curve.point_field(shared),
            ptd_ev.to_field(),
            ptd_peer.to_field(),
            t_ev.to_field(),
        ],
        meter,
    )
}

/// `H(R4 || PTD_CS || PTD_CAG || T_CS || Auth_EV-CAG)`
pub fn auth_cs_cag<T: FieldInt>(
    curve: &CurveParams<T>,
    r4: &Point<T>,
    ptd_cs: &PseudoId,
    ptd_cag: &PseudoId,
    t_cs: Timestamp,
    auth_ev_cag: &Digest,
    meter: &mut OpCounters,
) -> Digest {
    hash_concat(
        &[
            curve.point_field(r4),
            ptd_cs.to_field(),
            ptd_cag.to_field(),
            t_cs.to_field(),
            auth_ev_cag.to_field(),
        ],
        meter,
    )
}

/// `H(R5 || PTD_EV || PTD_CS || PTD_CAG || T_CAG)`
pub fn auth_cag<T: FieldInt>(
    curve: &CurveParams<T>,
    r5: &Point<T>,
    ptd_ev: &PseudoId,
    ptd_cs: &PseudoId,
    ptd_cag: &PseudoId,
    t_cag: Timestamp,
    meter: &mut OpCounters,
) -> Digest {
    hash_concat(
        &[
            curve.point_field(r5),
            ptd_ev.to_field(),
            ptd_cs.to_field(),
            ptd_cag.to_field(),
            t_cag.to_field(),
        ],
        meter,
    )
}
