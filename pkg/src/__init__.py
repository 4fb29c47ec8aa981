# STiBPALM benchmark harness package
