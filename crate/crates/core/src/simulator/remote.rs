//! Loopback TCP workers and the master-side connection pool.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::wire::{read_frame, write_frame, Frame, MessageType};
use crate::error::{Error, Result};
use crate::scheme::{CompCoefficients, EncodedShare, Variant, WorkerSlice};
use crate::tensor::Tensor;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

fn to_tensor(values: Vec<f32>, trailing: &[usize], what: &str) -> Result<Tensor<f32>> {
    let per: usize = trailing.iter().product();
    if values.is_empty() || values.len() % per != 0 {
        return Err(Error::Protocol(format!("{what} payload of {} floats does not tile {trailing:?}", values.len())));
    }
    let mut shape = vec![values.len() / per];
    shape.extend_from_slice(trailing);
    Tensor::new(shape, values)
}

/// Answer frames on one connection until it closes. Returns an error (and
/// the caller drops the connection) on a malformed frame.
pub fn serve_connection(slice: &WorkerSlice<f32>, stream: TcpStream) -> Result<()> {
    let c = slice.config().clone();
    let m = c.image_side;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut coeffs: Option<(u32, CompCoefficients<f32>)> = None;
    while let Some(frame) = read_frame(&mut reader)? {
        match frame.kind {
            MessageType::Coeffs => {
                let terms = c.computation_degree + 1;
                let all = to_tensor(frame.floats()?, &[terms, m, m], "COEFFS")?;
                let batch = all.shape()[0];
                // [B, P+1, M, M] on the wire, one [B, M, M] tensor per p here
                let mut matrices = vec![Vec::with_capacity(batch * m * m); terms];
                for chunk in all.data().chunks(terms * m * m) {
                    for (p, mat) in chunk.chunks(m * m).enumerate() {
                        matrices[p].extend_from_slice(mat);
                    }
                }
                let matrices =
                    matrices.into_iter().map(|d| Tensor::new(vec![batch, m, m], d)).collect::<Result<Vec<_>>>()?;
                coeffs = Some((frame.batch, CompCoefficients { matrices }));
            }
            MessageType::Share => {
                let matrix = to_tensor(frame.floats()?, &[m, m], "SHARE")?;
                let share = EncodedShare { worker: frame.worker as usize, alpha: frame.alpha, matrix };
                let comp = match (&coeffs, c.variant) {
                    (Some((b, comp)), Variant::Hs) if *b == frame.batch => Some(comp),
                    _ => None,
                };
                let reply = match slice.compute(&share, comp) {
                    Ok(out) => Frame::with_floats(MessageType::Result, frame.batch, frame.worker, frame.alpha, out.data()),
                    Err(e) => Frame::error(frame.batch, frame.worker, &e.to_string()),
                };
                write_frame(&mut writer, &reply)?;
            }
            other => return Err(Error::Protocol(format!("worker cannot accept {other:?} frames"))),
        }
    }
    Ok(())
}

/// Accept connections on `listener` one at a time until `stop` is set.
pub fn serve_worker(
    slice: &WorkerSlice<f32>,
    listener: TcpListener,
    stop: &AtomicBool,
    current: &Mutex<Option<TcpStream>>,
) -> Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                *current.lock().unwrap() = Some(stream.try_clone()?);
                // A malformed frame only costs this connection.
                let _ = serve_connection(slice, stream);
                *current.lock().unwrap() = None;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// A worker serving on a background thread.
pub struct WorkerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    current: Arc<Mutex<Option<TcpStream>>>,
    thread: Option<JoinHandle<Result<()>>>,
}

/// Bind `127.0.0.1:port` (0 picks a free port) and serve `slice`.
pub fn spawn_worker(slice: WorkerSlice<f32>, port: u16) -> Result<WorkerHandle> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let current = Arc::new(Mutex::new(None));
    let (s, c) = (stop.clone(), current.clone());
    let thread = thread::spawn(move || serve_worker(&slice, listener, &s, &c));
    Ok(WorkerHandle { addr, stop, current, thread: Some(thread) })
}

impl WorkerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting and cut the live connection, as a crash would.
    pub fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(s) = self.current.lock().unwrap().take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn round_trip(
        &mut self,
        batch: u32,
        share: &EncodedShare<f32>,
        coeffs: Option<&Frame>,
        classes: usize,
    ) -> Result<Tensor<f32>> {
        let worker = u16::try_from(share.worker).map_err(|_| Error::Protocol("worker index exceeds u16".into()))?;
        if let Some(f) = coeffs {
            write_frame(&mut self.writer, &Frame { worker, ..f.clone() })?;
        }
        let frame = Frame::with_floats(MessageType::Share, batch, worker, share.alpha, share.matrix.data());
        write_frame(&mut self.writer, &frame)?;
        let reply = read_frame(&mut self.reader)?.ok_or_else(|| Error::Protocol("connection closed".into()))?;
        match reply.kind {
            MessageType::Result if reply.batch == batch && reply.worker == worker => {
                to_tensor(reply.floats()?, &[classes], "RESULT")
            }
            MessageType::Error => Err(Error::Protocol(format!("worker {worker} reported: {}", reply.text()))),
            _ => Err(Error::Protocol(format!("unexpected {:?} frame from worker {worker}", reply.kind))),
        }
    }
}

/// Persistent connections to `N` workers; a lost connection marks that
/// worker failed for the rest of the run.
pub struct RemotePool {
    conns: Vec<Option<Connection>>,
    timeout: Duration,
}

impl RemotePool {
    /// Connect to every endpoint; unreachable workers start out failed.
    pub fn connect(endpoints: &[SocketAddr], timeout: Duration) -> Self {
        let conns = endpoints
            .iter()
            .map(|addr| {
                let s = TcpStream::connect_timeout(addr, timeout).ok()?;
                s.set_read_timeout(Some(timeout)).ok()?;
                s.set_nodelay(true).ok()?;
                Some(Connection { reader: BufReader::new(s.try_clone().ok()?), writer: s })
            })
            .collect();
        Self { conns, timeout }
    }

    pub fn len(&self) -> usize {
        self.conns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conns.is_empty()
    }

    pub fn alive(&self) -> Vec<bool> {
        self.conns.iter().map(Option::is_some).collect()
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Send each share (and the `V_p` for `H_S`) to its worker and wait for
    /// the replies concurrently. Failed workers yield `None`.
    pub fn dispatch(
        &mut self,
        batch: u32,
        shares: &[&EncodedShare<f32>],
        coeffs: Option<&CompCoefficients<f32>>,
        classes: usize,
    ) -> Vec<Option<Tensor<f32>>> {
        let coeff_frame = coeffs.map(|c| {
            // interleave to [B, P+1, M, M]
            let b = c.matrices[0].shape()[0];
            let per = c.matrices[0].len() / b;
            let mut flat = Vec::with_capacity(per * b * c.matrices.len());
            for i in 0..b {
                for m in &c.matrices {
                    flat.extend_from_slice(&m.data()[i * per..(i + 1) * per]);
                }
            }
            Frame::with_floats(MessageType::Coeffs, batch, 0, 0.0, &flat)
        });
        let mut slots: Vec<Option<&mut Connection>> = self.conns.iter_mut().map(Option::as_mut).collect();
        let mut jobs = Vec::with_capacity(shares.len());
        for share in shares {
            jobs.push(slots.get_mut(share.worker).and_then(Option::take).map(|c| (c, *share)));
        }
        let outcomes: Vec<Option<Result<Tensor<f32>>>> = thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|job| {
                    job.map(|(conn, share)| {
                        let cf = coeff_frame.as_ref();
                        scope.spawn(move || conn.round_trip(batch, share, cf, classes))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.map(|h| h.join().expect("dispatch thread panicked"))).collect()
        });
        outcomes
            .into_iter()
            .zip(shares)
            .map(|(outcome, share)| match outcome {
                Some(Ok(t)) => Some(t),
                Some(Err(_)) => {
                    self.conns[share.worker] = None;
                    None
                }
                None => None,
            })
            .collect()
    }
}
