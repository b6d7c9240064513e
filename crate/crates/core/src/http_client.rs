use std::ops::Deref;
use std::time::Duration;

/// A blocking HTTP client that may be created and dropped from any thread.
///
/// `reqwest::blocking::Client` owns a private runtime and panics if it is
/// built or dropped from inside an async executor. Engines are shared with
/// async HTTP handlers, so both ends of the client's life are moved onto a
/// plain thread.
#[derive(Debug)]
pub(crate) struct BlockingClient(Option<reqwest::blocking::Client>);

impl BlockingClient {
    pub(crate) fn new(timeout: Duration) -> Result<Self, reqwest::Error> {
        std::thread::spawn(move || {
            reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
        })
        .join()
        .expect("client construction does not panic")
        .map(|c| Self(Some(c)))
    }
}

impl Deref for BlockingClient {
    type Target = reqwest::blocking::Client;

    fn deref(&self) -> &Self::Target {
        self.0.as_ref().expect("client present until drop")
    }
}

impl Drop for BlockingClient {
    fn drop(&mut self) {
        if let Some(client) = self.0.take() {
            let _ = std::thread::Builder::new()
                .name("http-client-drop".into())
                .spawn(move || drop(client));
        }
    }
}
