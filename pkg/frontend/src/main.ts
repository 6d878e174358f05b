/** Browser entry point: same-origin server by default, ?base= to override. */
import { mount } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("base") ?? window.location.origin;
mount(document, base);
