//! Step response of the CSTR around the high-grade operating point.
//!
//! Usage: cargo run --release --example reactor_simulation [-- <dF_I kg/h> <dT_c K>]

use polycstr::reactor::{ControlInputs, Reactor, ReactorParams};

fn main() -> polycstr::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (d_fi, d_tc) = (args.first().copied().unwrap_or(0.1), args.get(1).copied().unwrap_or(0.0));

    let reactor = Reactor::new(ReactorParams::default())?;
    let (x0, u0) = reactor.solve_operating_point(100.0, 350.0)?;
    println!("operating point: F_I = {:.4} kg/h, T_c = {:.3} K", u0.f_i, u0.t_c);
    println!("state: {x0:?}");

    let u = ControlInputs::new(u0.f_i + d_fi, u0.t_c + d_tc);
    println!("\nstep to F_I = {:.4}, T_c = {:.3}", u.f_i, u.t_c);
    println!("{:>6} {:>10} {:>10} {:>10}", "t [h]", "C_M", "C_P", "T");
    let mut x = x0;
    for k in 0..=40 {
        if k % 4 == 0 {
            println!("{:>6.1} {:>10.3} {:>10.3} {:>10.3}", k as f64 * 0.5, x.c_m, x.c_p, x.t);
        }
        x = reactor.integrate_step(&x, u, 0.5)?;
    }

    let ss = reactor.solve_steady_state(u, &x)?;
    println!("\nnew steady state: C_P = {:.3} kg/m3, T = {:.3} K", ss.c_p, ss.t);

    let cold = reactor.no_reaction_equilibrium(300.0);
    println!("no-initiator equilibrium at T_c = 300 K: T = {:.3} K", cold.t);
    Ok(())
}
