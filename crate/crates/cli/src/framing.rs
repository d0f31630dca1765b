//! Length-prefixed frames on a byte stream: a 4-byte big-endian length that
//! must equal [`FRAME_LEN`], then the frame itself.

use std::io;

use efpix_core::FRAME_LEN;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub type Frame = [u8; FRAME_LEN];

pub fn encode(frame: &Frame) -> [u8; 4 + FRAME_LEN] {
    let mut out = [0u8; 4 + FRAME_LEN];
    out[..4].copy_from_slice(&(FRAME_LEN as u32).to_be_bytes());
    out[4..].copy_from_slice(frame);
    out
}

pub async fn frame_write<W: AsyncWrite + Unpin>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&encode(frame)).await?;
    w.flush().await
}

/// `Ok(None)` on a clean end of stream between frames. A bad length prefix
/// or a truncated frame is an `InvalidData` / `UnexpectedEof` error.
pub async fn frame_read<R: AsyncRead + Unpin>(r: &mut R) -> io::Result<Option<Box<Frame>>> {
    let mut len = [0u8; 4];
    if r.read(&mut len[..1]).await? == 0 {
        return Ok(None);
    }
    r.read_exact(&mut len[1..]).await?;
    let len = u32::from_be_bytes(len);
    if len as usize != FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len}, expected {FRAME_LEN}"),
        ));
    }
    let mut frame = Box::new([0u8; FRAME_LEN]);
    r.read_exact(&mut frame[..]).await?;
    Ok(Some(frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::net::{TcpListener, TcpStream};

    fn frame(tag: u8) -> Frame {
        let mut f = [tag; FRAME_LEN];
        f[0] = 1;
        f
    }

    #[tokio::test]
    async fn loopback_round_trip_preserves_order() {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let writer = tokio::spawn(async move {
            let mut s = TcpStream::connect(addr).await.unwrap();
            frame_write(&mut s, &frame(7)).await.unwrap();
            frame_write(&mut s, &frame(9)).await.unwrap();
        });
        let (mut s, _) = listener.accept().await.unwrap();
        assert_eq!(*frame_read(&mut s).await.unwrap().unwrap(), frame(7));
        assert_eq!(*frame_read(&mut s).await.unwrap().unwrap(), frame(9));
        writer.await.unwrap();
        assert!(frame_read(&mut s).await.unwrap().is_none());
    }

    #[tokio::test]
    async fn wrong_length_is_rejected() {
        for len in [579u32, 581, 0, u32::MAX] {
            let mut bytes = len.to_be_bytes().to_vec();
            bytes.extend_from_slice(&[0u8; FRAME_LEN]);
            let err = frame_read(&mut bytes.as_slice()).await.unwrap_err();
            assert_eq!(err.kind(), io::ErrorKind::InvalidData, "{len}");
        }
    }

    #[tokio::test]
    async fn truncation_is_an_error() {
        let full = encode(&frame(3));
        for cut in [1, 3, 4, 100, full.len() - 1] {
            let err = frame_read(&mut &full[..cut]).await.unwrap_err();
            assert_eq!(err.kind(), io::ErrorKind::UnexpectedEof, "{cut}");
        }
        assert!(frame_read(&mut &[][..]).await.unwrap().is_none());
    }
}
