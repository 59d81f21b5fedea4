//! The batch cluster on its own: first-fit placement, head-of-line
//! blocking, deletes and walltime kills, through the qsub-style script.

use rcms::cluster::{script, ClusterManager};

fn main() {
    let mut cluster = ClusterManager::uniform(2, 8);
    let session = "\
        qsub cfd 8 2048 600 0 ./solver\n\
        qsub rcms-r1-0 8 4096 3600 0 rclient worker=rcms-r1-0 cores=8 heartbeat_s=10\n\
        qsub rcms-r1-1 8 4096 3600 0 rclient worker=rcms-r1-1 cores=8 heartbeat_s=10\n\
        schedule 0\n\
        qstat\n\
        util\n\
        qdel 2 120000\n\
        schedule 120000\n\
        walltime 600000\n\
        schedule 600000\n\
        qstat rcms-\n";
    for (cmd, reply) in session
        .lines()
        .zip(script::execute_script(&mut cluster, session))
    {
        println!("{:<70} {reply}", cmd.trim());
    }
}
