import { mount } from "./app.js";

mount("app");
