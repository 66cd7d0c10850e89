//! Simulates the load-cell and ultrasonic frames of one patient, parses
//! them back from the wire format and averages them into a measurement.
//!
//! cargo run --example sensor_stream

use virtdoc::sensors::{average_measurement, bmi, format_frame, parse_frame, simulate_sensor_stream, Profile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = Profile { weight_kg: 86.2, height_m: 1.748 };
    let frames = simulate_sensor_stream(profile, 0.2, 5, 42)?;
    let mut parsed = Vec::new();
    for frame in &frames {
        let wire = format_frame(frame);
        println!("{wire}");
        parsed.push(parse_frame(&wire)?);
    }
    let avg = average_measurement(&parsed)?;
    println!(
        "averaged weight {:.2} kg, height {:.3} m, BMI {:.1} (true BMI {:.1})",
        avg.weight_kg,
        avg.height_m,
        bmi(avg.weight_kg, avg.height_m)?,
        bmi(profile.weight_kg, profile.height_m)?
    );
    Ok(())
}
