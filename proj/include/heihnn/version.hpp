#pragma once

#define HEIHNN_VERSION "0.1.0"
