// Python module contmsg._core

#include "contmsg/progress.hpp"
#include "contmsg/scenarios.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace contmsg;
namespace sc = contmsg::scenarios;

namespace {

// A Python callable that may be invoked and destroyed from threads not holding the GIL.
struct PyCallable {
	std::shared_ptr<py::object> fn;

	explicit PyCallable(py::object f)
	    : fn(new py::object(std::move(f)), [](py::object* p) {
		      py::gil_scoped_acquire gil;
		      delete p;
	      }) {}
};

std::vector<std::byte> to_bytes(const py::bytes& b) {
	const std::string_view sv = b;
	const auto* p = reinterpret_cast<const std::byte*>(sv.data());
	return {p, p + sv.size()};
}

py::bytes from_bytes(std::span<const std::byte> s) { return {reinterpret_cast<const char*>(s.data()), s.size()}; }

Rank source_arg(std::int64_t r) { return r < 0 ? any_source : Rank{static_cast<std::uint32_t>(r)}; }
Tag tag_arg(std::int64_t t) { return t < 0 ? any_tag : Tag{static_cast<std::uint64_t>(t)}; }

} // namespace

PYBIND11_MODULE(_core, m) {
	m.doc() = "Continuation-based completion for nonblocking message passing";

	static py::exception<Error> error_type(m, "ContmsgError");
	py::register_exception_translator([](std::exception_ptr p) {
		try {
			if(p) std::rethrow_exception(p);
		} catch(const Error& e) {
			py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
			exc.attr("code") = std::string(to_string(e.code()));
			PyErr_SetObject(error_type.ptr(), exc.ptr());
		}
	});

	m.attr("ANY_SOURCE") = -1;
	m.attr("ANY_TAG") = -1;

	py::class_<Status>(m, "Status")
	    .def_property_readonly("source", [](const Status& s) -> std::int64_t { return s.source == any_source ? -1 : s.source.value; })
	    .def_property_readonly("tag", [](const Status& s) -> std::int64_t { return s.tag == any_tag ? -1 : static_cast<std::int64_t>(s.tag.value); })
	    .def_readonly("count", &Status::count)
	    .def_readonly("cancelled", &Status::cancelled)
	    .def_property_readonly("truncated", [](const Status& s) { return s.error == StatusError::truncated; })
	    .def("__repr__", [](const Status& s) {
		    return "Status(source=" + std::to_string(s.source.value) + ", tag=" + std::to_string(s.tag.value) + ", count=" + std::to_string(s.count) +
		           ", cancelled=" + (s.cancelled ? "True" : "False") + (s.error == StatusError::truncated ? ", truncated" : "") + ")";
	    });

	py::class_<InfoConfig>(m, "InfoConfig")
	    .def(py::init([](bool poll_only, bool enqueue_complete, std::int64_t max_poll, bool any_thread) {
		    InfoConfig c;
		    c.poll_only = poll_only;
		    c.enqueue_complete = enqueue_complete;
		    c.max_poll = max_poll;
		    c.exec_context = any_thread ? ExecContext::any : ExecContext::application;
		    c.validate();
		    return c;
	    }),
	        py::arg("poll_only") = false, py::arg("enqueue_complete") = false, py::arg("max_poll") = -1, py::arg("any_thread") = false)
	    .def_static("from_pairs", &InfoConfig::from_pairs)
	    .def_readonly("poll_only", &InfoConfig::poll_only)
	    .def_readonly("enqueue_complete", &InfoConfig::enqueue_complete)
	    .def_readonly("max_poll", &InfoConfig::max_poll);

	py::class_<OpHandle>(m, "Operation")
	    .def_property_readonly("id", &OpHandle::id)
	    .def_property_readonly("persistent", &OpHandle::persistent)
	    .def_property_readonly("state", [](const OpHandle& op) { return std::string(to_string(op.state())); })
	    .def_property_readonly("status", &OpHandle::status)
	    .def_property_readonly("data", [](const OpHandle& op) { return from_bytes(op.data()); });

	py::class_<Endpoint>(m, "Endpoint")
	    .def_property_readonly("rank", [](const Endpoint& e) { return e.rank().value; })
	    .def("isend", [](Endpoint& e, std::uint32_t dest, std::int64_t tag, const py::bytes& data) {
		    auto payload = to_bytes(data);
		    py::gil_scoped_release nogil;
		    return e.isend(Rank{dest}, tag_arg(tag), payload);
	    })
	    .def("irecv", [](Endpoint& e, std::int64_t source, std::int64_t tag, std::size_t capacity) {
		    py::gil_scoped_release nogil;
		    return e.irecv(source_arg(source), tag_arg(tag), capacity);
	    })
	    .def("send_init", [](Endpoint& e, std::uint32_t dest, std::int64_t tag, const py::bytes& data) {
		    auto payload = to_bytes(data);
		    return e.send_init(Rank{dest}, tag_arg(tag), payload);
	    })
	    .def("recv_init", [](Endpoint& e, std::int64_t source, std::int64_t tag, std::size_t capacity) { return e.recv_init(source_arg(source), tag_arg(tag), capacity); })
	    .def("start", &Endpoint::start, py::call_guard<py::gil_scoped_release>())
	    .def("cancel", &Endpoint::cancel, py::call_guard<py::gil_scoped_release>());

	py::class_<ContinuationRequest>(m, "ContinuationRequest")
	    .def_property_readonly("id", &ContinuationRequest::id)
	    .def_property_readonly("state", [](const ContinuationRequest& cr) { return std::string(to_string(cr.state())); })
	    .def_property_readonly("registered", [](const ContinuationRequest& cr) { return cr.counters().registered; })
	    .def_property_readonly("ready_count", &ContinuationRequest::ready_count);

	py::class_<Runtime>(m, "Runtime")
	    .def_static("loopback", &Runtime::loopback, py::arg("world_size"))
	    .def_property_readonly("world_size", &Runtime::world_size)
	    .def("endpoint", [](Runtime& rt, std::uint32_t r) -> Endpoint& { return rt.endpoint(Rank{r}); }, py::return_value_policy::reference_internal)
	    .def("continue_init", &Runtime::continue_init, py::arg("config") = InfoConfig{})
	    .def(
	        "attach",
	        [](Runtime& rt, const std::vector<OpHandle>& ops, const ContinuationRequest& cr, py::object callback) {
		        // Statuses live with the callback so they outlast the attach call.
		        auto statuses = std::make_shared<std::vector<Status>>(ops.size());
		        PyCallable cb(std::move(callback));
		        std::vector<RequestRef> refs(ops.begin(), ops.end());
		        ContinuationFn fn = [cb, statuses](std::span<const Status> st, void*) {
			        py::gil_scoped_acquire gil;
			        try {
				        (*cb.fn)(std::vector<Status>(st.begin(), st.end()));
			        } catch(py::error_already_set& e) { e.discard_as_unraisable("contmsg continuation"); }
		        };
		        py::gil_scoped_release nogil;
		        return rt.attach(std::span<const RequestRef>(refs), cr, std::move(fn), nullptr, std::span<Status>(*statuses));
	        },
	        py::arg("ops"), py::arg("cr"), py::arg("callback"),
	        "Returns True if every op was already complete; the callback then never runs.")
	    .def("cr_test", &Runtime::cr_test, py::call_guard<py::gil_scoped_release>())
	    .def("cr_wait", &Runtime::cr_wait, py::call_guard<py::gil_scoped_release>())
	    .def("cr_free", &Runtime::cr_free, py::call_guard<py::gil_scoped_release>())
	    .def("progress_tick", &Runtime::progress_tick, py::call_guard<py::gil_scoped_release>())
	    .def("poll_all", &Runtime::poll_all, py::call_guard<py::gil_scoped_release>())
	    .def("test", &Runtime::test, py::call_guard<py::gil_scoped_release>())
	    .def("wait", &Runtime::wait, py::call_guard<py::gil_scoped_release>())
	    .def(
	        "start_progress_agent", [](Runtime& rt, std::int64_t backoff_us) { rt.start_progress_agent(std::chrono::microseconds(backoff_us)); },
	        py::arg("idle_backoff_us") = 50)
	    .def("stop_progress_agent", &Runtime::stop_progress_agent, py::call_guard<py::gil_scoped_release>())
	    .def_static("max_observed_depth", &Runtime::max_observed_depth);

	py::class_<sc::ScenarioConfig>(m, "ScenarioConfig")
	    .def(py::init<>())
	    .def_readwrite("scenario", &sc::ScenarioConfig::scenario)
	    .def_readwrite("world", &sc::ScenarioConfig::world)
	    .def_readwrite("transport", &sc::ScenarioConfig::transport)
	    .def_readwrite("roster", &sc::ScenarioConfig::roster)
	    .def_readwrite("seed", &sc::ScenarioConfig::seed)
	    .def_readwrite("iterations", &sc::ScenarioConfig::iterations)
	    .def_property(
	        "variant", [](const sc::ScenarioConfig& c) { return std::string(sc::to_string(c.variant)); },
	        [](sc::ScenarioConfig& c, const std::string& v) { c.variant = sc::parse_variant(v); })
	    .def_readwrite("K", &sc::ScenarioConfig::K)
	    .def_readwrite("max_concurrent_out", &sc::ScenarioConfig::max_concurrent_out)
	    .def_readwrite("max_poll", &sc::ScenarioConfig::max_poll)
	    .def_readwrite("poll_only", &sc::ScenarioConfig::poll_only)
	    .def_readwrite("enqueue_complete", &sc::ScenarioConfig::enqueue_complete)
	    .def_readwrite("msg_size", &sc::ScenarioConfig::msg_size)
	    .def_readwrite("capacity", &sc::ScenarioConfig::capacity)
	    .def_readwrite("messages", &sc::ScenarioConfig::messages)
	    .def_readwrite("imbalance", &sc::ScenarioConfig::imbalance)
	    .def_readwrite("tasks", &sc::ScenarioConfig::tasks)
	    .def_readwrite("task_cost", &sc::ScenarioConfig::task_cost)
	    .def_readwrite("gain", &sc::ScenarioConfig::gain)
	    .def_readwrite("slow_victim", &sc::ScenarioConfig::slow_victim)
	    .def_readwrite("slow_delay", &sc::ScenarioConfig::slow_delay)
	    .def_readwrite("blacklist_window", &sc::ScenarioConfig::blacklist_window);

	m.def(
	    "run_scenario",
	    [](const sc::ScenarioConfig& cfg) {
		    sc::ScenarioResult r;
		    {
			    py::gil_scoped_release nogil;
			    r = sc::run(cfg);
		    }
		    return py::make_tuple(sc::to_csv(r.table), r.failures);
	    },
	    "Runs a scenario; returns (csv_text, failed_assertions).");
}
