//! Quantized Gaussian tables and the rANS coder on their own.

use lbc::quant::{bin_mass, build_cdf_table, TABLE_PRECISION};
use lbc::rans::{self, SymbolStream};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> lbc::Result<()> {
    let table = build_cdf_table(0.3, 1.2, TABLE_PRECISION)?;
    println!(
        "N(0.3, 1.2^2): symbols {}..={} at {} bits of precision",
        table.symbol_min(),
        table.symbol_max(),
        table.precision()
    );
    for v in -2..=3 {
        println!(
            "  {v:>2}: model mass {:.5}, table cost {:.3} bits",
            bin_mass(v as f64, 0.3, 1.2),
            table.cost_bits(v)?
        );
    }

    // Latents drawn around varying predictions, as a codec would see them.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut stream = SymbolStream::new();
    for i in 0..50_000 {
        let mu = (i as f64 * 0.01).sin() * 4.0;
        let sigma = 0.3 + (i % 17) as f64 * 0.4;
        let y: f64 = Normal::new(mu, sigma).unwrap().sample(&mut rng);
        stream.push(y.round() as i32, build_cdf_table(mu, sigma, TABLE_PRECISION)?);
    }
    let bytes = rans::encode(&stream)?;
    let ideal = stream.ideal_bits()?;
    println!(
        "\n{} symbols: {} bytes, ideal {:.0} bytes, overhead {:.3}%",
        stream.len(),
        bytes.len(),
        ideal / 8.0,
        100.0 * (8.0 * bytes.len() as f64 / ideal - 1.0)
    );
    let decoded = rans::decode(&bytes, stream.tables(), stream.len())?;
    println!("decoded symbols identical: {}", decoded == stream.symbols());
    Ok(())
}
