//! WebSocket front end: frames out as JSON text, audio out as binary PCM
//! chunks, key positions in as `{"key_pos": m}`.
//!
//! Clients connecting on a path containing `full` get every frame; others
//! get the decimated UI channel.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use tungstenite::handshake::server::{Request, Response};
use tungstenite::{Message, WebSocket};

use super::publish::{Fanout, FanoutHandle, Subscription};
use super::{Frame, PublisherHandle};
use crate::feeds::{to_pcm16, AudioRing};
use crate::teleop::KeyMailbox;

#[derive(Debug, Deserialize)]
struct KeyMessage {
    key_pos: f64,
}

/// Parses an inbound client message.
pub fn parse_key_message(text: &str) -> Option<f64> {
    serde_json::from_str::<KeyMessage>(text).ok().map(|m| m.key_pos)
}

/// Binary audio message: 8-byte little-endian tick, then 16-bit LE PCM.
pub fn encode_audio_chunk(tick: u64, samples: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 2 * samples.len());
    out.extend_from_slice(&tick.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn decode_audio_chunk(bytes: &[u8]) -> Option<(u64, Vec<i16>)> {
    if bytes.len() < 8 || (bytes.len() - 8) % 2 != 0 {
        return None;
    }
    let tick = u64::from_le_bytes(bytes[..8].try_into().ok()?);
    let pcm = bytes[8..].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Some((tick, pcm))
}

/// Drains the audio ring into PCM chunks of up to `chunk` samples and fans
/// them out. The tick prefix is the tick of the chunk's first sample.
pub fn spawn_audio_pump(
    ring: Arc<AudioRing>,
    samples_per_tick: usize,
    chunk: usize,
    depth: usize,
    stop: Arc<AtomicBool>,
) -> (JoinHandle<()>, FanoutHandle<Vec<u8>>) {
    let (mut fanout, handle) = Fanout::<Vec<u8>>::new(depth);
    let per_tick = samples_per_tick.max(1) as u64;
    let join = std::thread::spawn(move || {
        let mut buf = Vec::with_capacity(chunk);
        let mut consumed = 0u64;
        let mut seq = 0u64;
        while !stop.load(Ordering::Relaxed) {
            buf.clear();
            let first = consumed + ring.overruns();
            let n = ring.pop_into(&mut buf, chunk);
            if n == 0 {
                std::thread::sleep(Duration::from_millis(2));
                continue;
            }
            consumed += n as u64;
            let tick = first / per_tick + 1;
            fanout.offer(seq, || encode_audio_chunk(tick, &buf));
            seq += 1;
        }
    });
    (join, handle)
}

/// Accepts WebSocket clients on `listener` until `stop` is raised.
pub fn serve(
    listener: TcpListener,
    frames: PublisherHandle,
    audio: Option<FanoutHandle<Vec<u8>>>,
    mailbox: KeyMailbox,
    stop: Arc<AtomicBool>,
) -> std::io::Result<JoinHandle<()>> {
    listener.set_nonblocking(true)?;
    Ok(std::thread::spawn(move || {
        let mut clients: Vec<JoinHandle<()>> = Vec::new();
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let frames = frames.clone();
                    let audio = audio.as_ref().map(|a| a.subscribe_every(1));
                    let mailbox = mailbox.clone();
                    let stop = Arc::clone(&stop);
                    clients.push(std::thread::spawn(move || {
                        if let Err(e) = client(stream, frames, audio, mailbox, stop) {
                            eprintln!("client closed: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    eprintln!("accept failed: {e}");
                    std::thread::sleep(Duration::from_millis(10));
                }
            }
            clients.retain(|c| !c.is_finished());
        }
        for c in clients {
            let _ = c.join();
        }
    }))
}

fn client(
    stream: TcpStream,
    frames: PublisherHandle,
    audio: Option<Subscription<Vec<u8>>>,
    mailbox: KeyMailbox,
    stop: Arc<AtomicBool>,
) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut full = false;
    let mut ws = tungstenite::accept_hdr(stream, |req: &Request, resp: Response| {
        full = req.uri().path().contains("full");
        Ok(resp)
    })
    .map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(2)))?;
    let frames = if full { frames.subscribe() } else { frames.subscribe_ui() };
    pump(&mut ws, &frames, audio.as_ref(), &mailbox, &stop)
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    frames: &Subscription<Frame>,
    audio: Option<&Subscription<Vec<u8>>>,
    mailbox: &KeyMailbox,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    while !stop.load(Ordering::Relaxed) {
        while let Some(f) = frames.try_recv() {
            ws.write(Message::text(f.to_json()))?;
        }
        if let Some(a) = audio {
            while let Some(chunk) = a.try_recv() {
                ws.write(Message::binary(chunk.as_ref().clone()))?;
            }
        }
        ws.flush()?;
        match ws.read() {
            Ok(Message::Text(t)) => {
                if let Some(k) = parse_key_message(t.as_str()) {
                    mailbox.post(k);
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}
