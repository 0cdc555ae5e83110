//! Mapping of received packets and handshake messages onto output symbols.

use super::packet::{Frame, Packet, PacketType};
use super::tls;
use crate::alphabet::OutputSymbol;
use crate::automata::ObservationStep;

/// Output symbol for a complete TLS handshake message, if it has one.
pub fn message_symbol(typ: u8) -> Option<OutputSymbol> {
    Some(match typ {
        tls::SERVER_HELLO => OutputSymbol::InitSvrHello,
        tls::ENCRYPTED_EXTENSIONS => OutputSymbol::HndEncExt,
        tls::CERTIFICATE_REQUEST => OutputSymbol::HndCertReq,
        tls::CERTIFICATE => OutputSymbol::HndCert,
        tls::CERTIFICATE_VERIFY => OutputSymbol::HndCertVer,
        tls::FINISHED => OutputSymbol::HndFin,
        _ => return None,
    })
}

/// Symbols carried directly by frames; CRYPTO content is symbolized per message.
pub fn packet_symbols(p: &Packet) -> Vec<OutputSymbol> {
    if p.ty == PacketType::Retry {
        return vec![OutputSymbol::Retry];
    }
    let mut out = Vec::new();
    let mut only_acks = true;
    let mut has_ack = false;
    for f in &p.frames {
        match f {
            Frame::Ack { .. } => has_ack = true,
            Frame::Padding(_) => {}
            Frame::HandshakeDone => out.push(OutputSymbol::HndshkDone),
            Frame::NewToken(_) => out.push(OutputSymbol::NewTkn),
            Frame::NewConnectionId { .. } => out.push(OutputSymbol::VldNewConId),
            Frame::ConnectionClose { .. } => out.push(OutputSymbol::ConClose),
            _ => {}
        }
        if !matches!(f, Frame::Ack { .. } | Frame::Padding(_)) {
            only_acks = false;
        }
    }
    if has_ack && only_acks {
        out.push(OutputSymbol::PingAck);
    }
    out
}

/// Final observation for one step; silence becomes `NoResponse`.
pub fn finish(symbols: ObservationStep) -> ObservationStep {
    if symbols.is_empty() {
        ObservationStep::single(OutputSymbol::NoResponse)
    } else {
        symbols
    }
}
