//! Stick/slip torsion: rotate the base one way, then back, at two depths,
//! and watch how far the tip roll trails the commanded base angle.

use needle_steer::config::RunConfig;
use needle_steer::plant::{step, ControlInput, PlantState};

fn main() {
    let cfg = RunConfig::default();
    let medium = cfg.mediums["gelatin"];
    let dt = cfg.controller.dt();

    // Insert straight-ish to depth while spinning, then probe the lag.
    for depth in [20.0, 70.0] {
        let mut s = PlantState::at_entry(0.0);
        while s.depth < depth {
            s = step(&s, ControlInput::new(5.0, 0.0), &medium, dt);
        }
        println!("depth {depth} mm, slip lag width {:.2} rad", medium.lag_width(s.depth));
        println!("{:>6} {:>9} {:>9} {:>8}", "t", "alpha", "theta", "lag");
        let mut t = 0.0;
        for phase in [2.0 * std::f64::consts::PI, -2.0 * std::f64::consts::PI] {
            for k in 0..40 {
                s = step(&s, ControlInput::new(0.0, phase), &medium, dt);
                t += dt;
                if k % 8 == 7 {
                    println!("{t:>6.3} {:>9.3} {:>9.3} {:>8.3}", s.base_angle, s.tip_angle, s.lag());
                }
            }
        }
        println!();
    }
}
