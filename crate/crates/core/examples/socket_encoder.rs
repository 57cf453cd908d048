//! Serves the toy codec over TCP and encodes through the socket client,
//! the way an external encoder service plugs in.

use std::net::TcpListener;
use std::thread;

use concept_lm::codec::{serve, ConceptEncoder, HashedNgramCodec, SocketEncoder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    thread::spawn(move || serve(listener, &HashedNgramCodec::default()));

    let local = HashedNgramCodec::default();
    let remote = SocketEncoder::connect(addr, local.dim())?;
    println!("connected to {addr}");
    for s in ["Hello there.", "The socket returns the same vector."] {
        let a = remote.encode(s, "eng_Latn")?;
        let b = local.encode(s, "eng_Latn")?;
        println!("{s:?}: dim {} identical={}", a.dim(), a == b);
    }
    match remote.encode("Hallo.", "xx_Bad") {
        Err(e) => println!("bad tag rejected: {e}"),
        Ok(_) => println!("bad tag accepted"),
    }
    Ok(())
}
