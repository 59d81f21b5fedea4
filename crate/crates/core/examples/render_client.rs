//! A single r-client working through a job on one 8-core node, against the
//! closed-form makespan ceil(F / cores) * base.

use rcms::model::{FrameRange, NodeId, RenderJob, WorkerId};
use rcms::rclient::{ClientAction, ClientLaunch, RClient, RenderTimeModel};
use rcms::supervisor::Supervisor;
use rcms::SimTime;

fn main() {
    let frames = 40;
    let model = RenderTimeModel::new(201.76, 0.0, 1);
    let mut farm = Supervisor::default();
    farm.submit_render_job(
        RenderJob::new("anim", "scene.mb", FrameRange::new(1, frames).unwrap(), 1).unwrap(),
    )
    .unwrap();

    let launch = ClientLaunch {
        worker_id: WorkerId::new("rcms-r1-0"),
        cores: 8,
        heartbeat_interval_s: 10,
    };
    println!("payload: {}", launch.to_payload());
    let mut client =
        RClient::start(&mut farm, &launch, NodeId::new("node-01"), SimTime::ZERO).unwrap();

    let mut now = SimTime::ZERO;
    let mut done = 0;
    let mut last = SimTime::ZERO;
    while done < frames {
        for action in client.tick(now, &mut farm, &model) {
            if let ClientAction::Reported { finished, .. } = action {
                done += 1;
                last = finished;
            }
        }
        now = client.next_wakeup().unwrap();
    }
    let oracle = (frames as f64 / 8.0).ceil() * model.base_s;
    println!("{frames} frames finished at {last}; closed form {oracle:.3}s");

    let jittered = RenderTimeModel::new(201.76, 0.25, 7);
    let sample: Vec<String> = (1..=5)
        .map(|f| jittered.frame_duration(f).to_string())
        .collect();
    println!("jitter 0.25, seed 7, frames 1-5: {}", sample.join(" "));
}
