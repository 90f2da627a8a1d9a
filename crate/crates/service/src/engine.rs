//! Runs a session on its own thread and hands out the read-only views and
//! input sides the server needs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use teleop_core::config::DeviceKind;
use teleop_core::feedback::FeedbackTorques;
use teleop_core::leader::ConsoleHandle;
use teleop_core::mailbox::Mailbox;
use teleop_core::robot_model::RobotModel;
use teleop_core::session::{EventFeed, Session, SessionError, SessionSnapshot, SessionStats};

use crate::protocol::ModelInfo;

/// Everything a connection handler may touch. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct EngineHandle {
    pub snapshots: Mailbox<SessionSnapshot>,
    pub feedback: Mailbox<FeedbackTorques>,
    pub events: EventFeed,
    pub model: Arc<RobotModel>,
    pub model_info: Arc<ModelInfo>,
    pub console: Option<ConsoleHandle>,
    pub cancel: Arc<AtomicBool>,
}

impl EngineHandle {
    /// Views of `session` without running it.
    pub fn for_session(session: &Session, console: Option<ConsoleHandle>) -> Self {
        let model = session.pipeline().model().clone();
        let console_limbs = console
            .as_ref()
            .map(|c| c.limbs().to_vec())
            .unwrap_or_default();
        let info = ModelInfo::new(
            &model,
            session.dt(),
            session.header().limbs.clone(),
            console_limbs,
        );
        Self {
            snapshots: session.snapshots().clone(),
            feedback: session.channels().out.clone(),
            events: session.events().clone(),
            model,
            model_info: Arc::new(info),
            console,
            cancel: session.cancel_flag(),
        }
    }
}

#[derive(Debug)]
pub struct Engine {
    handle: EngineHandle,
    thread: Option<JoinHandle<Result<SessionStats, SessionError>>>,
}

impl Engine {
    /// Starts the session loop (and, for puppeteer leaders in real time, the
    /// feedback thread). The loop ends at `Shutdown`.
    pub fn spawn(mut session: Session, console: Option<ConsoleHandle>) -> Self {
        let handle = EngineHandle::for_session(&session, console);
        let thread = std::thread::Builder::new()
            .name("session".into())
            .spawn(move || {
                if session.leader().kind() == DeviceKind::Puppeteer {
                    session.start_feedback_thread();
                }
                let result = session.run(None);
                session.stop_feedback_thread();
                result.map(|_| session.stats().clone())
            })
            .expect("spawn session thread");
        Self {
            handle,
            thread: Some(thread),
        }
    }

    pub fn handle(&self) -> EngineHandle {
        self.handle.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(|t| t.is_finished())
    }

    /// Waits for the loop to end on its own.
    pub fn join(mut self) -> Result<SessionStats, SessionError> {
        self.thread
            .take()
            .expect("joined once")
            .join()
            .unwrap_or_else(|p| std::panic::resume_unwind(p))
    }

    /// Asks the session to park and shut down, then waits for it.
    pub fn stop(self) -> Result<SessionStats, SessionError> {
        self.handle.cancel.store(true, Ordering::SeqCst);
        self.join()
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.handle.cancel.store(true, Ordering::SeqCst);
            let _ = t.join();
        }
    }
}
