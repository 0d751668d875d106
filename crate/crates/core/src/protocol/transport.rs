//! Length-prefixed JSON over TCP.
//!
//! Wire format: `[u32 length (big-endian)][JSON payload]`

use std::io::{self, Read, Write};
use std::net::TcpStream;

use serde::{de::DeserializeOwned, Serialize};

use super::messages::Message;
use super::prover::Prover;
use super::ProtocolError;

const MAX_FRAME: usize = 16 * 1024 * 1024;

pub fn write_message<W: Write, T: Serialize>(writer: &mut W, msg: &T) -> io::Result<()> {
    let payload = serde_json::to_vec(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    writer.write_all(&(payload.len() as u32).to_be_bytes())?;
    writer.write_all(&payload)?;
    writer.flush()
}

pub fn read_message<R: Read, T: DeserializeOwned>(reader: &mut R) -> io::Result<T> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("message too large: {len} bytes")));
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload)?;
    serde_json::from_slice(&payload).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn transport_err(e: io::Error) -> ProtocolError {
    if e.kind() == io::ErrorKind::InvalidData {
        ProtocolError::Malformed(e.to_string())
    } else {
        ProtocolError::Transport(e.to_string())
    }
}

/// Verifier-side handle to a prover across a TCP connection.
pub struct RemoteProver {
    stream: TcpStream,
}

impl RemoteProver {
    pub fn new(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        RemoteProver { stream }
    }

    pub fn connect(addr: &str) -> Result<Self, ProtocolError> {
        TcpStream::connect(addr).map(Self::new).map_err(transport_err)
    }
}

impl Prover for RemoteProver {
    fn handle(&mut self, msg: &Message) -> Result<Option<Message>, ProtocolError> {
        write_message(&mut self.stream, msg).map_err(transport_err)?;
        if msg.expects_reply() {
            Ok(Some(read_message(&mut self.stream).map_err(transport_err)?))
        } else {
            Ok(None)
        }
    }
}

/// Serves `prover` on `stream` until the verifier sends FINAL or closes the connection.
pub fn serve_prover(mut stream: TcpStream, prover: &mut dyn Prover) -> Result<(), ProtocolError> {
    let _ = stream.set_nodelay(true);
    loop {
        let msg: Message = match read_message(&mut stream) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(transport_err(e)),
        };
        if let Some(reply) = prover.handle(&msg)? {
            write_message(&mut stream, &reply).map_err(transport_err)?;
        }
        if matches!(msg, Message::Final { .. }) {
            return Ok(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        let m = Message::Question { q: 1 };
        write_message(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        let back: Message = read_message(&mut Cursor::new(buf)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn oversized_frame_rejected() {
        let buf = (MAX_FRAME as u32 + 1).to_be_bytes().to_vec();
        assert!(read_message::<_, Message>(&mut Cursor::new(buf)).is_err());
    }
}
